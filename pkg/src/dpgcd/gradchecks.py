"""Registry of finite-difference checks for every primitive and composite module.

Each builder takes a seed and returns ``(f, inputs)`` for
:func:`dpgcd.autodiff.grad_check`. Outputs are reduced to a scalar by a
fixed random projection so that every output coordinate carries gradient.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import ParamStore, Tensor, grad_check, ops
from .change import CCA, CCAB, DSSM, HCFEB, ChangeConfig
from .decoder import DecoderConfig, DSMDecoder, PredictionHead, UPerFuse
from .encoder import Encoder, EncoderConfig, FeaturePyramid
from .errors import ConfigurationError
from .fusion import DepthFusion
from .losses import ChangeMask, LossConfig, grad_loss, mse, total_loss, weighted_ce

Builder = Callable[[int], tuple[Callable[[], Tensor], list[Tensor]]]


def _var(rng, *shape, lo=None, hi=None) -> Tensor:
    data = rng.normal(size=shape) if lo is None else rng.uniform(lo, hi, size=shape)
    return Tensor(data, requires_grad=True)


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    weights = rng.normal(size=out.shape)
    return lambda y: ops.sum(y * weights)


def _wrap(rng, forward, inputs):
    """Scalarise ``forward()`` with a projection drawn once from ``rng``."""
    proj = _project(forward(), rng)
    return (lambda: proj(forward())), inputs


def _unary(op, lo=None, hi=None) -> Builder:
    def build(seed):
        rng = np.random.default_rng(seed)
        x = _var(rng, 3, 4, 5, lo=lo, hi=hi)
        return _wrap(rng, lambda: op(x), [x])

    return build


def _binary(op, positive_b=False) -> Builder:
    def build(seed):
        rng = np.random.default_rng(seed)
        a = _var(rng, 3, 4)
        b = _var(rng, 4, lo=0.5, hi=2.0) if positive_b else _var(rng, 4)  # broadcast along rows
        return _wrap(rng, lambda: op(a, b), [a, b])

    return build


def _conv(stride, k, pad, mode="zeros", hw=8) -> Builder:
    def build(seed):
        rng = np.random.default_rng(seed)
        x = _var(rng, 3, hw, hw)
        w = _var(rng, 4, 3, k, k)
        b = _var(rng, 4)
        return _wrap(rng, lambda: ops.conv2d(x, w, b, stride, pad, mode), [x, w, b])

    return build


def _shape_ops(seed):
    rng = np.random.default_rng(seed)
    a = _var(rng, 2, 3, 4)
    b = _var(rng, 2, 1, 4)

    def fwd():
        y = ops.concat([a, b], axis=1)  # [2,4,4]
        y = ops.transpose(ops.reshape(y, (4, 2, 4)), (2, 0, 1))  # [4,4,2]
        return ops.index(y, (slice(1, 3), slice(None), 0)) * a[0, 0:2, 0:4]

    return _wrap(rng, fwd, [a, b])


def _reductions(seed):
    rng = np.random.default_rng(seed)
    x = _var(rng, 3, 4, 5)
    return _wrap(rng, lambda: ops.sum(x, axis=2) * ops.mean(x, axis=(0, 2))[0] + ops.mean(x, axis=2, keepdims=True)[..., 0], [x])


def _matmul(seed):
    rng = np.random.default_rng(seed)
    a = _var(rng, 2, 3, 4)
    b = _var(rng, 4, 5)
    return _wrap(rng, lambda: ops.matmul(a, b), [a, b])


def _linear(seed):
    rng = np.random.default_rng(seed)
    x, w, b = _var(rng, 6, 4), _var(rng, 4, 3), _var(rng, 3)
    return _wrap(rng, lambda: ops.linear(x, w, b), [x, w, b])


def _conv1d(seed):
    rng = np.random.default_rng(seed)
    x, w, b = _var(rng, 7, 4), _var(rng, 4, 3), _var(rng, 4)
    return _wrap(rng, lambda: ops.conv1d_causal(x, w, b), [x, w, b])


def _batch_norm(seed):
    rng = np.random.default_rng(seed)
    x, g, b = _var(rng, 3, 4, 5), _var(rng, 3), _var(rng, 3)
    st = ops.NormState.create(3)
    return _wrap(rng, lambda: ops.batch_norm(x, g, b, st, training=True, update_stats=False), [x, g, b])


def _layer_norm(seed):
    rng = np.random.default_rng(seed)
    x, g, b = _var(rng, 6, 5), _var(rng, 5), _var(rng, 5)
    return _wrap(rng, lambda: ops.layer_norm(x, g, b), [x, g, b])


def _resampling(seed):
    rng = np.random.default_rng(seed)
    x = _var(rng, 2, 5, 6)
    return _wrap(
        rng,
        lambda: ops.concat(
            [
                ops.upsample_bilinear(x, 9, 11).reshape(2, -1),
                ops.adaptive_avg_pool(x, 3, 4).reshape(2, -1),
                ops.global_avg_pool(x).reshape(2, -1),
            ],
            axis=1,
        ),
        [x],
    )


def _softmax(seed):
    rng = np.random.default_rng(seed)
    x = _var(rng, 5, 4)
    return _wrap(rng, lambda: ops.concat([ops.softmax(x), ops.log_softmax(x)], axis=1), [x])


def _scan(seed):
    rng = np.random.default_rng(seed)
    length, d, n = 9, 3, 4
    u = _var(rng, length, d)
    delta = _var(rng, length, d, lo=0.05, hi=0.8)
    a = _var(rng, d, n, lo=-2.0, hi=-0.1)
    b, c = _var(rng, length, n), _var(rng, length, n)
    return _wrap(rng, lambda: ops.scan(u, delta, a, b, c), [u, delta, a, b, c])


def _store(seed) -> ParamStore:
    return ParamStore(seed=seed, dtype=np.float64)


def _inference_store(seed) -> ParamStore:
    """Norms use stored statistics, so they act as fixed affine maps.

    With per-sample statistics, any per-channel constant entering a norm is
    cancelled exactly; those parameters then have a true gradient of zero and
    central differences return only roundoff. Fixed statistics keep every
    parameter in play. The per-sample path is checked by ``batch_norm``.
    """
    store = ParamStore(seed=seed, dtype=np.float64)
    store.training = False
    store.running_stats_in_eval = True
    return store


def _randomize_norm_stats(store: ParamStore, rng) -> None:
    for st in store.norm_states.values():
        st.running_mean[:] = rng.normal(scale=0.5, size=st.running_mean.shape)
        st.running_var[:] = rng.uniform(0.5, 2.0, size=st.running_var.shape)


def _module_inputs(store: ParamStore) -> list[Tensor]:
    return list(store)


def _fuse_level(seed):
    rng = np.random.default_rng(seed)
    store = _store(seed)
    fusion = DepthFusion(store, [4, 4, 4, 4])
    f_img, f_edm = _var(rng, 4, 4, 4), _var(rng, 4, 4, 4)
    return _wrap(rng, lambda: fusion.fuse_level(0, f_img, f_edm), [f_img, f_edm] + store.with_prefix("fusion.level1."))


def _ccab(seed):
    rng = np.random.default_rng(seed)
    store = _store(seed)
    blk = CCAB(store, "ccab", 4)
    f_d, f_i = _var(rng, 4, 5, 5), _var(rng, 4, 5, 5)
    return _wrap(rng, lambda: blk(f_d, f_i), [f_d, f_i] + _module_inputs(store))


def _dssm(seed):
    rng = np.random.default_rng(seed)
    store = _store(seed)
    blk = DSSM(store, "dssm", 2, ChangeConfig(d_state=4))
    f_d, f_i = _var(rng, 2, 3, 3), _var(rng, 2, 3, 3)
    return _wrap(rng, lambda: blk(f_d, f_i), [f_d, f_i] + _module_inputs(store))


def _cca(seed):
    rng = np.random.default_rng(seed)
    store = _store(seed)
    blk = CCA(store, "cca", 8, heads=2)
    x = _var(rng, 6, 8)
    return _wrap(rng, lambda: blk(x), [x] + _module_inputs(store))


def _hcfeb(seed):
    rng = np.random.default_rng(seed)
    store = _store(seed)
    blk = HCFEB(store, "hcfeb", 2, ChangeConfig(d_state=4, heads=2))
    f_d, f_i = _var(rng, 2, 3, 3), _var(rng, 2, 3, 3)
    return _wrap(rng, lambda: blk(f_d, f_i), [f_d, f_i] + _module_inputs(store))


_SMALL_DEC = DecoderConfig(fusion_width=4, head_width=3)


def _uper_fuse(seed):
    rng = np.random.default_rng(seed)
    store = _inference_store(seed)
    chans = [2, 3, 4, 5]
    blk = UPerFuse(store, chans, _SMALL_DEC)
    change = [_var(rng, c, s, s) for c, s in zip(chans, (16, 8, 4, 2))]
    _randomize_norm_stats(store, rng)
    return _wrap(rng, lambda: blk(change), change + _module_inputs(store))


def _head(out_channels):
    def build(seed):
        rng = np.random.default_rng(seed)
        store = _store(seed)
        head = PredictionHead(store, "head", 4, 3, out_channels)
        f = _var(rng, 4, 3, 3)
        return _wrap(rng, lambda: head(f), [f] + _module_inputs(store))

    return build


def _dsm_decoder(seed):
    rng = np.random.default_rng(seed)
    store = _inference_store(seed)
    chans = [2, 3, 4, 5]
    dec = DSMDecoder(store, chans, _SMALL_DEC)
    levels = [_var(rng, c, s, s) for c, s in zip(chans, (16, 8, 4, 2))]
    _randomize_norm_stats(store, rng)
    return _wrap(rng, lambda: dec(FeaturePyramid(levels)), levels + _module_inputs(store))


def _encoder(seed):
    rng = np.random.default_rng(seed)
    store = _store(seed)
    enc = Encoder(store, EncoderConfig(stem_channels=2, blocks_per_stage=1, in_channels=1))
    x = _var(rng, 1, 32, 32)

    def fwd():
        return ops.concat([f.reshape(-1) for f in enc.encode(x)], axis=0)

    return _wrap(rng, fwd, [x] + _module_inputs(store))


def _wce(seed):
    rng = np.random.default_rng(seed)
    logits = _var(rng, 3, 5, 6)
    labels = rng.integers(0, 3, size=(5, 6))
    w = (0.05, 0.95, 0.95)
    return (lambda: weighted_ce(logits, labels, w)), [logits]


def _mse(seed):
    rng = np.random.default_rng(seed)
    pred = _var(rng, 1, 5, 6)
    gt = rng.normal(size=(1, 5, 6))
    return (lambda: mse(pred, gt)), [pred]


def _grad_loss(seed, margin=0.05):
    """Inputs keep every masked difference at least ``margin`` from the |.| kink.

    grad_loss is piecewise linear, so central differences are exact unless a
    probe steps across a kink; the margin rules that out for eps < margin.
    """
    rng = np.random.default_rng(seed)
    mask = ChangeMask(rng.random((6, 7)) < 0.5)
    m = mask.mask
    gt = rng.normal(size=(1, 6, 7))
    while True:
        data = rng.normal(size=(1, 6, 7))
        dx = np.diff(data - gt, axis=-1)[0][m[:, :-1]]
        dy = np.diff(data - gt, axis=-2)[0][m[:-1, :]]
        if min(np.abs(dx).min(initial=np.inf), np.abs(dy).min(initial=np.inf)) > margin:
            break
    pred = Tensor(data, requires_grad=True)
    return (lambda: grad_loss(pred, gt, mask)), [pred]


def _total_loss(seed):
    rng = np.random.default_rng(seed)
    logits, h3, dsm = _var(rng, 3, 4, 4), _var(rng, 1, 4, 4), _var(rng, 1, 4, 4)
    labels = rng.integers(0, 3, size=(4, 4))
    dh, dsm_gt = rng.normal(size=(1, 4, 4)), rng.normal(size=(1, 4, 4))
    mask = ChangeMask.from_labels(labels)
    cfg = LossConfig()

    def fwd():
        parts = {
            "wce": weighted_ce(logits, labels, cfg.class_weights),
            "mse3d": mse(h3, dh),
            "grad": grad_loss(h3, dh, mask),
            "mse_dsm": mse(dsm, dsm_gt),
        }
        return total_loss(parts, cfg)

    return fwd, [logits, h3, dsm]


def full_model(seed, size: int = 32):
    """Total loss of a small end-to-end model on one synthetic tile.

    Probes the normalised DSM and image inputs: their gradients pass through
    every module (encoder, fusion, change extraction, decoder, losses).
    Parameter gradients of the same modules are covered by the module checks;
    deep parameters of a 32x32 model carry gradients near 1e-9, below what a
    central difference on a loss of order 10 can resolve in float64.
    Norms use stored statistics for the reason given in :func:`_inference_store`.
    """
    from .data.synthetic import SyntheticSceneConfig, generate_tile
    from .model import DPGCD, ModelConfig, ModelInputs
    from .prng import Prng

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        encoder=EncoderConfig(stem_channels=4, blocks_per_stage=1),
        change=ChangeConfig(d_state=4, heads=2),
        decoder=DecoderConfig(fusion_width=8, head_width=4),
        dtype="float64",
        seed=seed,
        eval_norm="running",
    )
    model = DPGCD(cfg).eval()
    _randomize_norm_stats(model.store, rng)
    scene = SyntheticSceneConfig(tile_size=size, building_count=(1, 2), building_size=(6, 10))
    sample = generate_tile(scene, Prng(seed), "gradcheck")
    prepared = model.prepare(sample.dsm_t1, sample.img_t2, sample.depth_prior)
    dsm = Tensor(prepared.dsm.data.copy(), requires_grad=True)
    img = Tensor(prepared.img.data.copy(), requires_grad=True)
    inputs = ModelInputs(dsm, img, prepared.edm)
    # the depth branch is a stop-gradient copy of the encoder, so the
    # finite-difference reference must hold its features fixed as well
    depth = model.depth_features(inputs)
    loss_cfg = LossConfig()
    return (lambda: model.loss(model.forward(inputs, depth), sample, loss_cfg)[0]), [dsm, img]


PRIMITIVES: dict[str, Builder] = {
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "div": _binary(ops.div, positive_b=True),
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, 0.2, 3.0),
    "abs": _unary(ops.abs, 0.1, 2.0),
    "square": _unary(ops.square),
    "relu": _unary(ops.relu),
    "sigmoid": _unary(ops.sigmoid),
    "silu": _unary(ops.silu),
    "gelu": _unary(ops.gelu),
    "softplus": _unary(ops.softplus),
    "reductions": _reductions,
    "shape_ops": _shape_ops,
    "matmul": _matmul,
    "linear": _linear,
    "conv2d": _conv(1, 3, 1),
    "conv2d_stride2": _conv(2, 3, 1),
    "conv2d_stem": _conv(4, 5, 2),
    "conv2d_replicate": _conv(1, 3, 1, "replicate", hw=5),
    "conv1d_causal": _conv1d,
    "batch_norm": _batch_norm,
    "layer_norm": _layer_norm,
    "resampling": _resampling,
    "softmax": _softmax,
    "scan": _scan,
}

MODULES: dict[str, Builder] = {
    "fuse_level": _fuse_level,
    "ccab": _ccab,
    "dssm": _dssm,
    "cca": _cca,
    "hcfeb": _hcfeb,
    "uper_fuse": _uper_fuse,
    "head_2d": _head(3),
    "head_3d": _head(1),
    "dsm_decoder": _dsm_decoder,
    "encoder": _encoder,
    "weighted_ce": _wce,
    "mse": _mse,
    "grad_loss": _grad_loss,
    "total_loss": _total_loss,
}

CHECKS: dict[str, Builder] = {**PRIMITIVES, **MODULES}
# run on request only (``gradcheck --module full_model``): it is the slowest check
EXTRA: dict[str, Builder] = {"full_model": full_model}

# probes per input tensor; modules have many parameter tensors
_COORDS = {name: 64 for name in PRIMITIVES} | {name: 8 for name in MODULES} | {"full_model": 24}


# step sizes: small where ReLU kinks sit close to the probes, larger where
# gradients are small next to the function value (roundoff) or the function is piecewise linear
_EPS = {"hcfeb": 1e-4, "uper_fuse": 1e-6, "grad_loss": 1e-3, "full_model": 3e-3}
DEFAULT_EPS = 1e-5


def check(name: str, seed: int) -> float:
    f, inputs = {**CHECKS, **EXTRA}[name](seed)
    eps = _EPS.get(name, DEFAULT_EPS)
    return float(grad_check(f, inputs, eps=eps, max_coords=_COORDS[name], seed=seed))


def run_checks(names, seeds=range(10)):
    """Yield (name, worst relative error over the seeds)."""
    for name in names:
        if name not in CHECKS and name not in EXTRA:
            raise ConfigurationError(f"unknown gradient check {name!r}; choose from {sorted(CHECKS)}")
        yield name, max(check(name, s) for s in seeds)
