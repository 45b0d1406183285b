from .distill import DistillSpec, decode_block, gen_distillation
from .gerb import GerbSpec, gen_gerb
from .ramsey import gen_ramsey_mcm
from .repcode import RepCodeSpec, gen_walking_repcode

__all__ = [
    "DistillSpec",
    "GerbSpec",
    "RepCodeSpec",
    "decode_block",
    "gen_distillation",
    "gen_gerb",
    "gen_ramsey_mcm",
    "gen_walking_repcode",
]
