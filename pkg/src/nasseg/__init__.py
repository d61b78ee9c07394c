"""Superpixels from classifier activations, and the evaluations built on them.

The pipeline upsamples intermediate feature activations to image resolution,
normalizes and channel-weights them, clusters pixels into regions, and splits
those regions into connected superpixels. On top sit saliency aggregation,
deletion-curve scoring (LeRF / greedy AUC maximization), box-based
localization scoring, and class-level cluster attribution, all talking to the
classifier only through a file-, wire-, or synthetic-backed oracle.
"""

__version__ = "0.1.0"

from .clustering import (
    Dendrogram,
    KMeansModel,
    KnnModel,
    cut_dendrogram,
    kmeans_fit,
    knn_fit,
    knn_predict,
    ward_fit,
)
from .features import (
    BICUBIC_A,
    FeatureMatrix,
    NasConfig,
    build_feature_matrix,
    row_l2_normalize,
    segment,
    upsample,
)
from .lerf import (
    LerfCurve,
    MaskState,
    greedy_auc_max,
    lerf_curve,
    scale_and_auc,
    write_curve_csv,
    write_summary_csv,
)
from .oracle import (
    FileOracle,
    HttpOracle,
    ModelMeta,
    OracleHandle,
    SyntheticOracle,
    decode_tensor,
    encode_tensor,
    export_store,
    get_activations,
    get_logits,
    open_oracle,
    serve_oracle,
    standardize,
)
from .saliency import component_means, minmax_normalize, superpixelify
from .semantic import (
    ClassClusterModel,
    ClusterSaliencyTable,
    cluster_saliency_table,
    fit_class_cluster_model,
    write_table_csv,
)
from .superpixels import (
    SuperpixelPartition,
    boundary_frequency,
    boundary_mask,
    connected_components,
    upsample_labels_nearest,
)
from .tensorio import (
    ImageSpec,
    read_image_png,
    read_label_map,
    read_npy,
    write_image_png,
    write_label_map,
    write_npy,
    write_segmentation_png,
)
from .wsol import (
    BBox,
    WsolConfig,
    WsolScores,
    boxes_from_heatmap,
    iou,
    max_box_acc_v2,
    read_gt_csv,
    write_results_csv,
)

__all__ = [
    "__version__",
    "BICUBIC_A",
    "BBox",
    "ClassClusterModel",
    "ClusterSaliencyTable",
    "Dendrogram",
    "FeatureMatrix",
    "FileOracle",
    "HttpOracle",
    "ImageSpec",
    "KMeansModel",
    "KnnModel",
    "LerfCurve",
    "MaskState",
    "ModelMeta",
    "NasConfig",
    "OracleHandle",
    "SuperpixelPartition",
    "SyntheticOracle",
    "WsolConfig",
    "WsolScores",
    "boundary_frequency",
    "boundary_mask",
    "boxes_from_heatmap",
    "build_feature_matrix",
    "cluster_saliency_table",
    "component_means",
    "connected_components",
    "cut_dendrogram",
    "decode_tensor",
    "encode_tensor",
    "export_store",
    "fit_class_cluster_model",
    "get_activations",
    "get_logits",
    "greedy_auc_max",
    "iou",
    "kmeans_fit",
    "knn_fit",
    "knn_predict",
    "lerf_curve",
    "max_box_acc_v2",
    "minmax_normalize",
    "open_oracle",
    "read_gt_csv",
    "read_image_png",
    "read_label_map",
    "read_npy",
    "row_l2_normalize",
    "scale_and_auc",
    "segment",
    "serve_oracle",
    "standardize",
    "superpixelify",
    "upsample",
    "upsample_labels_nearest",
    "ward_fit",
    "write_curve_csv",
    "write_image_png",
    "write_label_map",
    "write_npy",
    "write_results_csv",
    "write_segmentation_png",
    "write_summary_csv",
    "write_table_csv",
]
