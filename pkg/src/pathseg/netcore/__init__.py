"""Network construction and execution (torch)."""

from pathseg.kinds import BlockKind, InteractionKind  # noqa: F401
from pathseg.netcore.blocks import build_block  # noqa: F401
from pathseg.netcore.checkpoint import (  # noqa: F401
    load_checkpoint,
    load_weights,
    save_checkpoint,
)
from pathseg.netcore.interactions import (  # noqa: F401
    build_interaction,
    interact_attention_a,
    interact_bilateral_b,
    interact_variants,
)
from pathseg.netcore.network import (  # noqa: F401
    AggregateHead,
    MultiPathNet,
    aggregate_and_head,
    build_network,
    count_parameters,
    forward,
    init_parameters,
)
