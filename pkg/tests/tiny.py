"""A small configuration that trains in well under a second per epoch."""

from jointslu.config import DataConfig, KtConfig, RunConfig, StagePlan
from jointslu.encoder import EncoderConfig
from jointslu.sluhead import SluHeadConfig


def tiny_config(stages=None, seed=0, sizes=(8, 4, 4)) -> RunConfig:
    return RunConfig(
        grammar=DataConfig(sizes=list(sizes)),
        encoder=EncoderConfig(layers=2, d_model=8, heads=2, pos_dim=8, sctc_positions=[1, 2]),
        sluhead=SluHeadConfig(pred_dim=8, embed_dim=4, joint_dim=8),
        kt=KtConfig(width=4),
        stages=stages if stages is not None else [StagePlan(kind="slu_adapt", epochs=1, batch_size=4)],
        seed=seed,
    )
