"""field-level attention summaries from exported traces"""
from __future__ import annotations

from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from bmdfusion.errors import DataError
from bmdfusion.model.xattn import AttentionTrace

MEAN_ROW = "mean"


def field_attention_table(traces: Sequence[AttentionTrace]) -> pd.DataFrame:
    """one row per layer plus the all-layer mean; one column per key token.

    Each value is the attention a key token receives, averaged over heads,
    query tokens and every sample in the traces, so each row sums to 1.
    """
    if not traces:
        raise DataError("no attention traces to summarize")
    names = traces[0].key_names
    n_layers = len(traces[0].layers)
    per_layer: List[np.ndarray] = []
    for layer in range(n_layers):
        rows = np.concatenate([t.field_attention(layer) for t in traces], axis=0)  # [samples, Tk]
        per_layer.append(rows.mean(axis=0))
    table = np.vstack(per_layer + [np.mean(per_layer, axis=0)])
    index = [f"layer_{i + 1}" for i in range(n_layers)] + [MEAN_ROW]
    columns = list(names) if names else [f"key_{i}" for i in range(table.shape[1])]
    frame = pd.DataFrame(table, columns=columns)
    frame.insert(0, "layer", index)
    return frame


def top_fields(table: pd.DataFrame, k: int = 3) -> Dict[str, float]:
    mean = table[table["layer"] == MEAN_ROW].drop(columns="layer").iloc[0]
    return {str(name): float(v) for name, v in mean.sort_values(ascending=False).head(k).items()}
