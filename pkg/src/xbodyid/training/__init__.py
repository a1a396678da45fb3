from .losses import BatchConfigError, MiningRecord, batch_hard_triplet_loss, combined_loss, identity_loss
from .mining import MiningStats, mining_statistics
from .samplers import BatchSpec, SamplerError, batch_stream, domain_aware_batches, eligible_subjects, random_batches
from .trainer import DivergenceError, EpochLog, TrainConfig, TrainResult, read_train_log, train
