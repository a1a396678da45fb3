from .config import RunConfig
from .experiments import eval_run, rerun, smoke_run, synthesize, train_run
