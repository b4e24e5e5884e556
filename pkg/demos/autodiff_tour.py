"""Tour of the tensor engine: forward ops, reverse-mode gradients, checking.

Run with ``python3 demos/autodiff_tour.py``. Builds a few expressions by
hand, pulls gradients back through them, and finishes with the finite
difference checker that the test suite leans on.
"""

import numpy as np

from cfree import tensor as T


def main() -> None:
    rng = np.random.default_rng(0)

    print("== a scalar chain ==")
    x = T.Tensor(np.array([0.5, -1.2, 2.0]), requires_grad=True)
    y = T.reduce_sum(T.mul(T.sigmoid(x), x))
    y.backward()
    print("y           =", float(y.data))
    print("dy/dx       =", x.grad)

    print()
    print("== a tiny two-layer block ==")
    batch = T.Tensor(rng.normal(size=(5, 3)))
    w1 = T.Tensor(rng.normal(size=(3, 8)) * 0.5, requires_grad=True)
    b1 = T.Tensor(np.zeros(8), requires_grad=True)
    w2 = T.Tensor(rng.normal(size=(8, 1)) * 0.5, requires_grad=True)
    h = T.gelu(T.linear(batch, w1, b1))
    out = T.reduce_sum(T.matmul(h, w2))
    out.backward()
    print("out         =", float(out.data))
    print("|dout/dw1|  =", float(np.abs(w1.grad).max()))
    print("|dout/dw2|  =", float(np.abs(w2.grad).max()))

    print()
    print("== attention over four tokens ==")
    q = T.Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    k = T.Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    v = T.Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    mixed = T.softmax_attention(q, k, v, heads=2)
    T.reduce_sum(mixed).backward()
    print("mixed shape =", mixed.data.shape)
    print("|dq|        =", float(np.abs(q.grad).max()))

    print()
    print("== gradcheck against central differences ==")
    params = {"w1": w1, "w2": w2, "q": q}

    def f():
        hh = T.gelu(T.linear(batch, w1, b1))
        att = T.softmax_attention(q, k, v, heads=2)
        return T.add(T.reduce_sum(T.matmul(hh, w2)), T.reduce_sum(att))

    report = T.gradcheck(f, params, max_entries=8)
    print(report.summary())
    print("agrees to 1e-6:", bool(report.ok(1e-6)))


if __name__ == "__main__":
    main()
