"""Gradient penalty on a tiny dense critic, checked against finite differences.

The penalty needs the critic's input gradient, so training the critic means
differentiating through a gradient. This script builds that second-order
graph and compares it with a brute-force numerical derivative.

    python3 demos/penalty_by_hand.py
"""

import numpy as np

from ivgan import autograd as A
from ivgan import gradcheck as G
from ivgan import wgan

# a linear critic has a constant input gradient w, so the penalty is (|w| - 1)^2
rng = np.random.default_rng(0)
w = rng.standard_normal(5)
xhat = A.Var(rng.standard_normal((4, 5)), requires_grad=True)
critic = lambda x: A.reshape(A.matmul(x, A.as_var(w.reshape(-1, 1), x)), (4,))
gp = float(wgan.gradient_penalty(critic, xhat).value)
print(f"linear critic: penalty {gp:.10f}, closed form {(np.linalg.norm(w) - 1) ** 2:.10f}")

# a 4 -> 6 -> 1 tanh critic: differentiate the penalty w.r.t. its weights
fn, params = G.penalty_case("tanh", seed=0)
vs = [A.Var(p, requires_grad=True) for p in params]
grads = A.grad(fn(*vs), vs[:3])
print("d penalty / d W1 =")
print(np.round(grads[0].value, 5))

res = G.check("penalty, dense tanh critic", fn, params, rtol=1e-3)
print(res.line())
