from src.model.micro_resnet import (  # noqa: F401
    MicroResNet,
    ResidualBlock,
    build_model,
    freeze_prefix,
    replace_head,
)
from src.model.linear import LinearClassifier, build_linear_classifier  # noqa: F401
from src.model.checkpoint import (  # noqa: F401
    Checkpoint,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
