import numpy as np

from thermosurrogate.dataset import NodeTimeSeries, Quantity


def make_series(values, run_id="RUN1", dt=1.0, quantity=Quantity.TEMPERATURE, node_ids=None):
    values = np.asarray(values, dtype=float)
    ids = node_ids or [f"n{j}" for j in range(values.shape[1])]
    return NodeTimeSeries(run_id, quantity, np.arange(len(values)) * dt, values, ids)
