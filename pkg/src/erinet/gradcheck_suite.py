"""Finite-difference verification suite.

Runs in 64-bit mode with central differences (eps 1e-5). The ``ops`` scope
covers every tensor primitive plus the composite blocks that matter most
(attention head, a 3-step LSTM, both correlation losses). The ``model``
scope probes selected coordinates of an assembled extractor+head against
the full pipeline loss; frozen parameters are excluded from the table.

Inputs that would sit on a relu/max kink are nudged away from it before
differencing, since the subgradient choice there is a convention, not a
derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from . import tensor as T
from .attention import CrossAttentionHead, attention_head_forward
from .config import RunConfig, build_models
from .eri_head import eri_forward
from .mtl_dan import mtl_dan_forward
from .nn import LstmLayer, lstm_forward
from .tensor import Tensor

OPS_THRESHOLD = 1e-4
MODEL_THRESHOLD = 1e-3
EPS = 1e-5


@dataclass
class CheckRow:
    name: str
    max_rel_error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold


def _away_from_zero(values: np.ndarray, margin: float = 0.1) -> np.ndarray:
    small = np.abs(values) < margin
    return values + np.where(small, np.sign(values + 0.5) * margin, 0.0)


def _param(rng, shape, away_from_zero=False) -> Tensor:
    values = rng.normal(size=shape)
    if away_from_zero:
        values = _away_from_zero(values)
    return Tensor(values, requires_grad=True)


def run_ops_checks(seed: int = 0) -> list[CheckRow]:
    rows: list[CheckRow] = []
    with T.use_dtype(np.float64):
        rng = np.random.default_rng(seed)

        def check(name: str, op_fn, params, threshold: float = OPS_THRESHOLD):
            # One fixed random projection turns the op output into a scalar
            # while exercising every output coordinate; drawn once so the
            # probe function stays deterministic under finite differences.
            with T.no_grad():
                probe_shape = op_fn().shape
            proj = Tensor._wrap(np.asarray(rng.normal(size=probe_shape)))

            def f() -> Tensor:
                return T.reduce("sum", T.mul(op_fn(), proj))

            rows.append(CheckRow(name, T.grad_check(f, params, eps=EPS), threshold))

        a = _param(rng, (3, 4))
        b = _param(rng, (3, 4))
        bias = _param(rng, (4,))
        for kind in ("add", "sub", "mul"):
            check(f"elementwise_{kind}", lambda k=kind: T.elementwise(k, a, b), [a, b])
            check(f"elementwise_{kind}_broadcast", lambda k=kind: T.elementwise(k, a, bias), [a, bias])
        denom = Tensor(np.abs(rng.normal(size=(3, 4))) + 0.5, requires_grad=True)
        check("elementwise_div", lambda: T.elementwise("div", a, denom), [a, denom])

        m1 = _param(rng, (4, 3))
        m2 = _param(rng, (3, 2))
        check("matmul", lambda: T.matmul(m1, m2), [m1, m2])
        check("transpose", lambda: T.transpose(m1), [m1])

        x_conv = _param(rng, (2, 3, 5, 5))
        k_conv = _param(rng, (4, 3, 3, 3))
        check("conv2d", lambda: T.conv2d(x_conv, k_conv, stride=1, padding=1), [x_conv, k_conv])
        check("conv2d_strided", lambda: T.conv2d(x_conv, k_conv, stride=2, padding=0), [x_conv, k_conv])

        x_act = _param(rng, (3, 5), away_from_zero=True)
        check("relu", lambda: T.relu(x_act), [x_act])
        check("sigmoid", lambda: T.sigmoid(x_act), [x_act])
        check("tanh", lambda: T.tanh(x_act), [x_act])
        check("softmax", lambda: T.softmax(x_act, axis=1), [x_act])
        check("exp", lambda: T.exp(x_act), [x_act])
        x_pos = Tensor(np.abs(rng.normal(size=(3, 5))) + 0.5, requires_grad=True)
        check("log", lambda: T.log(x_pos), [x_pos])
        check("sqrt", lambda: T.sqrt(x_pos), [x_pos])

        x_red = _param(rng, (3, 4, 2))
        check("reduce_sum", lambda: T.reduce("sum", x_red, axes=(0, 2)), [x_red])
        check("reduce_mean", lambda: T.reduce("mean", x_red, axes=1), [x_red])
        # Distinct values keep the argmax stable under the probe perturbation.
        x_max = Tensor(rng.permutation(24).reshape(3, 4, 2) * 0.37 + 0.1, requires_grad=True)
        check("reduce_max", lambda: T.reduce("max", x_max, axes=1), [x_max])

        c1 = _param(rng, (2, 3))
        c2 = _param(rng, (2, 5))
        check("concat", lambda: T.concat([c1, c2], axis=1), [c1, c2])
        check("getitem", lambda: c2[:, 1:4], [c2])
        check("reshape", lambda: T.reshape(x_red, (6, 4)), [x_red])

        head = CrossAttentionHead(channels=8, reduction=4, rng=rng)
        fmap = _param(rng, (2, 8, 4, 4))
        head_params = [p for _, p in head.named_parameters()] + [fmap]
        check("attention_head", lambda: attention_head_forward(head, fmap), head_params)

        lstm = LstmLayer(input_dim=5, hidden_dim=6, rng=rng)
        seq = _param(rng, (2, 3, 5))
        lstm_params = [p for _, p in lstm.named_parameters()] + [seq]
        check("lstm_3steps", lambda: lstm_forward(lstm, seq, [3, 2]), lstm_params)

        pred = Tensor(rng.uniform(0.1, 0.9, size=(6, 7)), requires_grad=True)
        target = rng.uniform(0.0, 1.0, size=(6, 7))
        rows.append(CheckRow("loss_pcc", T.grad_check(lambda: metrics.correlation_loss("pcc", pred, target), [pred], eps=EPS), OPS_THRESHOLD))
        rows.append(CheckRow("loss_ccc", T.grad_check(lambda: metrics.correlation_loss("ccc", pred, target), [pred], eps=EPS), OPS_THRESHOLD))
    return rows


def run_model_checks(seed: int = 0, freeze_extractor: bool = True, coords_per_param: int = 2) -> list[CheckRow]:
    """Probe the assembled pipeline loss against central differences.

    Each trainable parameter tensor contributes a row with the max relative
    error over a few randomly chosen coordinates. Frozen extractor rows are
    absent by construction.
    """
    rows: list[CheckRow] = []
    with T.use_dtype(np.float64):
        rng = np.random.default_rng(seed)
        config = RunConfig(
            input_size=(3, 8, 8),
            stage_channels=(4, 4, 8, 8),
            blocks_per_stage=(1, 1, 1, 1),
            attn_heads=2,
            attn_reduction=4,
            lstm_hidden=6,
            seed=seed,
            freeze_extractor=freeze_extractor,
        )
        extractor, head = build_models(config)
        extractor.set_training(False)
        frames = rng.normal(size=(3, 2, 3, 8, 8))
        lengths = [2, 1, 2]
        targets = rng.uniform(0.1, 0.9, size=(3, 7))

        def loss_fn() -> Tensor:
            descriptor_rows = []
            for b in range(3):
                desc = mtl_dan_forward(extractor, T.as_tensor(frames[b])).concat
                descriptor_rows.append(T.reshape(desc, (1, 2, 22)))
            pred = eri_forward(head, T.concat(descriptor_rows, axis=0), lengths)
            return metrics.correlation_loss("pcc", pred, targets)

        named = list(extractor.named_parameters("extractor.")) + list(head.named_parameters("head."))
        trainable = [(name, p) for name, p in named if p.requires_grad]
        T.zero_grad([p for _, p in trainable])
        loss = loss_fn()
        T.backward(loss)
        grads = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in trainable}
        T.zero_grad([p for _, p in trainable])
        with T.no_grad():
            for name, p in trainable:
                flat = p.data.reshape(-1)
                picks = rng.choice(flat.size, size=min(coords_per_param, flat.size), replace=False)
                worst = 0.0
                for i in picks:
                    original = flat[i]
                    flat[i] = original + EPS
                    f_plus = float(loss_fn().data)
                    flat[i] = original - EPS
                    f_minus = float(loss_fn().data)
                    flat[i] = original
                    numeric = (f_plus - f_minus) / (2.0 * EPS)
                    analytic = float(grads[name].reshape(-1)[i])
                    err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
                    worst = max(worst, err)
                rows.append(CheckRow(name, worst, MODEL_THRESHOLD))
    return rows


def format_table(rows: list[CheckRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'check':<{width}}  {'max_rel_error':>14}  {'threshold':>10}  result"]
    for r in rows:
        lines.append(
            f"{r.name:<{width}}  {r.max_rel_error:>14.3e}  {r.threshold:>10.0e}  {'pass' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
