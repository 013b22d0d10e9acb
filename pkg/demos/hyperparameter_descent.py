#!/usr/bin/env python3
"""Tune learning rates and momenta by gradient descent on the validation loss.

The inner optimizer run is itself a recurrent system whose parameters are the
hyperparameters, so any of the gradient methods gives a hyper-gradient.
"""

from rbp.experiments.config import config_from_dict
from rbp.experiments.hyperopt import run_hyperopt

for method in ("bptt", "tbptt", "neumann-rbp"):
    cfg = config_from_dict({"experiment": "hyperopt", "method": method, "k": 50,
                            "hyperopt": {"task": "quadratic", "inner_steps": 100, "meta_steps": 10}})
    (record,), _ = run_hyperopt(cfg)
    curve = " ".join(f"{v:.4f}" for v in record.losses)
    print(f"{method:12s} meta loss: {curve}")
    print(f"{'':12s} lr {[round(v, 4) for v in record.diagnostics['learning_rates']]}"
          f"  momentum {[round(v, 3) for v in record.diagnostics['momenta']]}")
