from .boxes import BoundingBox, InvalidBoxError, assign_labels_by_face_overlap, iou
from .manifest import DOMAINS, DatasetManifest, ImageRecord, ManifestError, load_manifest, save_manifest
from .synth import DomainDegradation, SyntheticConfig, generate_synthetic_dataset
