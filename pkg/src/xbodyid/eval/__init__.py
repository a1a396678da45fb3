from .features import extract_features, extract_parts, load_feature_store, save_feature_store
from .metrics import (MetricError, SimilarityMatrix, cmc, cosine_similarity_matrix, mean_average_precision,
                      rank_gallery)
from .protocol import (ABLATION_SUBSETS, EvalReport, ProtocolConfig, ProtocolError, gallery_query_matrix,
                       local_feature_ablation, run_identification_protocol)
from .templates import Template, build_templates
