"""lidarforge: forge mixed real-synthetic out-of-distribution LiDAR
datasets, score per-point anomalies on supplied features, and evaluate
anomaly segmentation."""

from .errors import (FormatError, LidarForgeError, PlacementInfeasibleError,
                     UndefinedMetricError, UnknownCategoryError, ValidationError)
from .insertion import (ForgeParams, InsertionRecord, SplitPolicy, compose_scan,
                        forge_scan, forge_split, pick_placement, scan_seed)
from .intensity import (SurfaceNormalField, estimate_normals, lambert_intensity,
                        normalize_and_noise)
from .losses import (LossWeights, loss_ce, loss_contrastive, loss_heads,
                     loss_lovasz, loss_objectosphere, loss_prototype,
                     mean_class_features)
from .mesh_bank import (AnomalyObject, MeshBank, ReflectivityCatalog, TriangleMesh,
                        augment, build_anomaly_object, load_off, load_target_heights,
                        place, reflectivity_of, sample_surface)
from .metrics import (EvalPair, auroc, auroc_trapezoid, average_precision,
                      fpr_at_tpr, range_binned_ap, roc_curve)
from .range_projection import RangeImage, beam_rows_of, project, reproject, write_pgm
from .scan_io import (LabelArray, PointCloud, SensorConfig, check_pair,
                      read_labels, read_scan, write_labels, write_scan)
from .scoring import (ClassificationResult, FeatureSet, PrototypeBank, ScoreVector,
                      accumulate_prototypes, classify, compute_scores, read_tensor,
                      score_contrastive, score_cosine, score_entropy, score_fused,
                      score_semantic, write_tensor)

__version__ = "0.1.0"
