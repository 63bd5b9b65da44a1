from .kitti import (
    FormatError,
    KittiObject,
    MissingKeyError,
    Scene,
    box3d_to_kitti,
    kitti_to_box3d,
    list_scene_ids,
    load_kitti_scene,
    parse_calib,
    parse_label,
    parse_velodyne,
    read_calib,
    read_image,
    read_label,
    read_velodyne,
    save_kitti_label,
    save_scene,
    write_calib,
    write_ppm,
    write_velodyne,
)
from .samples import ObjectSample, SkipLog, build_object_samples, crop_resize, difficulty_of
from .synth import (
    ConfigError,
    SynthConfig,
    default_calibration,
    generate_synthetic_scene,
    make_splits,
    read_manifest,
    scene_rng,
    write_manifest,
    write_synthetic_dataset,
)
