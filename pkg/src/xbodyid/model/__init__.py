from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .lora import LoraConfig, LoRALinear, apply_lora, lora_parameters, merge_lora
from .vit import (REGIONS, BodyIdNet, FeatureBundle, FusionFFN, ModelConfig, ModelError, RegionMask,
                  average_local, build_attention_mask, fuse, region_masks)
