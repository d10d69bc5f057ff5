"""Sequence-level expert routing for mixture-of-experts layers.

Score matrices are nested sequences (lists or 2-D arrays) of router
probabilities, one row per token. Masks come back as lists of 0/1 rows.
"""

from ._moelab import (
    BudgetInfeasible,
    InvalidInput,
    OnlineRouter,
    batchtopk_route,
    load_balance_loss,
    normalized_entropy,
    online_route,
    routing_entropy,
    seqtopk_route,
    seqtopk_route_bounded,
    softmax_scores,
    topk_route,
)

__all__ = [
    "BudgetInfeasible",
    "InvalidInput",
    "OnlineRouter",
    "batchtopk_route",
    "load_balance_loss",
    "normalized_entropy",
    "online_route",
    "routing_entropy",
    "seqtopk_route",
    "seqtopk_route_bounded",
    "softmax_scores",
    "topk_route",
]
