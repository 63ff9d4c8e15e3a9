from .architectures import (
    ARCHITECTURES,
    DEFAULT_INPUT_HW,
    build_dcase_ae,
    build_duman_cae,
    build_model,
    build_skip_cae,
    build_skip_cae_transformer,
)
from .graph import SkipEdge, SkipGraph
from .training import (
    EarlyStopping,
    TrainHistory,
    TrainingError,
    anomaly_score,
    anomaly_scores,
    reconstruct,
    train_model,
)
from ..nn.checkpoint import CheckpointError, load_state, read_header, save_state


def save_model(path, model: SkipGraph, seed=0, epoch=None, best_val_loss=None, extra=None):
    header = model.header()
    header.update(seed=seed, epoch=epoch, best_val_loss=best_val_loss)
    if extra:
        header.update(extra)
    save_state(path, model.state_dict(), header)


def load_model(path, expect_architecture=None):
    """Rebuild the architecture named in the checkpoint header and load its weights."""
    header, state = load_state(path)
    arch = header.get("architecture")
    if expect_architecture is not None and arch != expect_architecture:
        raise CheckpointError(f"{path}: checkpoint holds {arch!r}, expected {expect_architecture!r}")
    args = dict(header.get("build_args") or {})
    if arch == "skip_cae_transformer" and "token_hw" in args:
        args["token_hw"] = tuple(args["token_hw"])
    model = build_model(arch, tuple(header["input_hw"]), header.get("seed") or 0, **args)
    model.load_state_dict(state)
    model.eval()
    return model, header
