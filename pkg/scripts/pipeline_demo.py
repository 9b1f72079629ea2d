"""Simulate one run, reduce sensors, train a GRU, and compensate the predicted drift.

    python3 scripts/pipeline_demo.py --seed 3 --epochs 30
"""

import argparse

import numpy as np

from thermosurrogate.dataset import split
from thermosurrogate.error_chain import compensation_offset, load_chain, tcp_drift
from thermosurrogate.models import ModelKind, ModelSpec, predict
from thermosurrogate.thermal_sim import load_network_config, make_run_suite
from thermosurrogate.train import OptimConfig, full_node_mse, prepare_specialised, train_model


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--tau", type=float, default=0.95)
    a = p.parse_args()

    net, _ = load_network_config()
    (temp, _), = make_run_suite(1, net, a.seed)
    print(f"simulated {temp.run_id}: {temp.n_steps} steps x {temp.n_nodes} nodes")

    optim = OptimConfig(learning_rate=3e-3, epochs=a.epochs)
    prep = prepare_specialised(temp, a.tau, optim.seq_len)
    J = len(prep.plan.retained)
    print(f"node reduction at tau={a.tau}: kept {J} of {temp.n_nodes}")

    spec = ModelSpec(kind=ModelKind.GRU, d_in=J, d_out=J, hidden=32, layers=1)
    res = train_model(spec, optim, prep.train, prep.val, seed=1)
    pred = predict(res.spec, res.params, prep.test_inputs)
    mse, _ = full_node_mse(pred, prep.test_targets_full, prep)
    print(f"GRU test MSE over all nodes (normalised): {mse:.3e}")

    # back to kelvin on every node, then through the expansion chain
    kelvin = prep.plan.reconstruct(prep.normalizer.select(prep.plan.retained).invert(pred))
    test = split(temp)[2].segment(optim.seq_len, None)
    predicted = test.with_values(kelvin)
    chain = load_chain()
    est_pred = tcp_drift(predicted, chain)
    est_true = tcp_drift(test, chain)
    offset = compensation_offset(est_pred)
    residual = est_true.drift + offset
    um = 1e6
    print(f"{'axis':>4} {'drift [um]':>11} {'offset [um]':>12} {'residual [um]':>14}")
    for i, ax in enumerate("XYZ"):
        print(f"{ax:>4} {est_true.drift[-1, i] * um:11.3f} {offset[-1, i] * um:12.3f} {residual[-1, i] * um:14.4f}")
    print(f"max |residual| over the test segment: {np.max(np.abs(residual)) * um:.4f} um")


if __name__ == "__main__":
    main()
