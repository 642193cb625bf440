"""MNIST pipeline: unsupervised feature learning, spike-forced readout,
linear decoding, input reconstruction and connectivity sweeps.

Protocol: digits are presented one per timestep in a pipeline (input at t,
features respond at t+1, outputs at t+2). Phase 1 trains the feature layer
unsupervised over the training stream; phase 2 freezes it and trains the
output layer with spike forcing, each output group forced on its digit's
presentations. Evaluation counts output-group spikes per test digit, and
separately fits a ridge decoder on the (frozen) feature responses.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core import Network, train_step
from ..mnist_data import DigitStream
from ..topology import build_network, preset_mnist

PIPELINE_DELAY = 2


@dataclass
class LinearDecoder:
    weights: np.ndarray     # (n_features + 1, 10), first row is the bias
    ridge: float

    def scores(self, features: np.ndarray) -> np.ndarray:
        feats = np.atleast_2d(features)
        return self.weights[0] + feats @ self.weights[1:]

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.scores(features).argmax(axis=1)


@dataclass
class MnistReport:
    spike_accuracy: float | None
    decoder_accuracy: float
    confusion: np.ndarray          # decoder confusion, rows = true digit
    feature_images: np.ndarray     # (n_features, 784) excitatory weights
    params: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"spike_accuracy": self.spike_accuracy,
                "decoder_accuracy": self.decoder_accuracy,
                "confusion": self.confusion.tolist(),
                "params": {k: v for k, v in self.params.items()
                           if isinstance(v, (str, int, float, bool))}}


def fit_linear_decoder(features, labels, ridge: float = 1e-4) -> LinearDecoder:
    """Regularized least squares from feature responses onto one-hot
    targets; classification is the argmax of the decoder output."""
    feats = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = feats.shape[0]
    design = np.hstack([np.ones((n, 1)), feats])
    onehot = np.zeros((n, 10))
    onehot[np.arange(n), labels] = 1.0
    gram = design.T @ design + ridge * np.eye(design.shape[1])
    weights = np.linalg.solve(gram, design.T @ onehot)
    return LinearDecoder(weights=weights, ridge=ridge)


def layer_response(net: Network, images: np.ndarray, layer: int = 1) -> np.ndarray:
    """Frozen-network spike amplitudes of a layer for a batch of binary
    images (one pipelined step per hop, computed in closed form)."""
    x = np.asarray(images, dtype=float)
    for li in range(1, layer + 1):
        proj_in = [p for p in net.projections if p.dst == li]
        drive = np.zeros((x.shape[0] if li == 1 else out.shape[0], net.layers[li].size))
        for p in proj_in:
            src_act = x if p.src == 0 else out
            drive += src_act @ p.net_weights().T
        out = np.clip(drive + net.layers[li].const_input - net.layers[li].thr, 0.0, 1.0)
    return out


def run_mnist(preset, train_stream: DigitStream, test_stream: DigitStream,
              seed: int = 0, feature_steps: int | None = None,
              readout_steps: int | None = None, train_readout: bool = True,
              progress=None) -> tuple[MnistReport, Network]:
    """Run the full two-phase training protocol and evaluate.

    feature_steps / readout_steps default to the preset horizon (one
    presentation per training digit). The streams must supply at least
    that many digits (use DigitStream.tiled to cycle a smaller set).
    """
    net = build_network(preset, seed=seed)
    horizon = preset.horizon
    feature_steps = horizon if feature_steps is None else feature_steps
    readout_steps = horizon if readout_steps is None else readout_steps
    group_size = net.layers[2].size // 10

    # phase 1: unsupervised feature learning; outputs are left alone
    net.schedule.horizon = feature_steps
    net.schedule.t = 0
    feature_afferents = [p for p in net.projections if p.dst == 1]
    readout_afferents = [p for p in net.projections if p.dst == 2]
    readout_flags = [(p.exc_plastic, p.inh_plastic) for p in readout_afferents]
    for p in readout_afferents:
        p.exc_plastic = p.inh_plastic = False
    net.layers[2].itp_enabled = False

    train_stream.reset()
    if len(train_stream) < feature_steps:
        raise ValueError(f"training stream has {len(train_stream)} digits, "
                         f"need {feature_steps}")
    for t in range(feature_steps):
        img, _ = train_stream.next()
        train_step(net, external={0: img.astype(float)})
        if progress:
            progress("features", t, feature_steps)

    # phase 2: freeze features, spike-force the output groups
    for p in feature_afferents:
        p.exc_plastic = p.inh_plastic = False
    net.layers[1].itp_enabled = False
    for p, (exc_p, inh_p) in zip(readout_afferents, readout_flags):
        p.exc_plastic, p.inh_plastic = exc_p, inh_p
    net.layers[2].itp_enabled = True

    spike_accuracy = None
    if train_readout:
        net.schedule.horizon = readout_steps
        net.schedule.t = 0
        train_stream.reset()
        if len(train_stream) < readout_steps:
            raise ValueError(f"training stream has {len(train_stream)} digits, "
                             f"need {readout_steps}")
        recent_labels = []
        for t in range(readout_steps):
            img, lab = train_stream.next()
            recent_labels.append(lab)
            forced = None
            if t >= PIPELINE_DELAY:
                lag_lab = recent_labels[t - PIPELINE_DELAY]
                fvec = np.zeros(net.layers[2].size, dtype=bool)
                fvec[lag_lab * group_size:(lag_lab + 1) * group_size] = True
                forced = {2: fvec}
            train_step(net, external={0: img.astype(float)}, forced=forced)
            if progress:
                progress("readout", t, readout_steps)

        out_resp = layer_response(net, test_stream.images, layer=2)
        group_counts = (out_resp > 0).reshape(out_resp.shape[0], 10, group_size).sum(axis=2)
        group_amps = out_resp.reshape(out_resp.shape[0], 10, group_size).sum(axis=2)
        # most spiking neurons wins; summed amplitude breaks ties
        pred = (group_counts + 1e-9 * group_amps).argmax(axis=1)
        spike_accuracy = float((pred == test_stream.labels).mean())

    # decoder on frozen feature responses
    train_feats = layer_response(net, train_stream.images[:feature_steps], layer=1)
    decoder = fit_linear_decoder(train_feats, train_stream.labels[:feature_steps])
    test_feats = layer_response(net, test_stream.images, layer=1)
    pred = decoder.predict(test_feats)
    decoder_accuracy = float((pred == test_stream.labels).mean())
    confusion = np.zeros((10, 10), dtype=int)
    for true, hat in zip(test_stream.labels, pred):
        confusion[true, hat] += 1

    exc_in = next(p for p in net.projections if p.dst == 1 and p.exc_mask.any())
    report = MnistReport(spike_accuracy=spike_accuracy,
                         decoder_accuracy=decoder_accuracy,
                         confusion=confusion,
                         feature_images=exc_in.exc_w.copy(),
                         params=dict(preset.params, seed=seed,
                                     feature_steps=feature_steps,
                                     readout_steps=readout_steps))
    return report, net


def reconstruct_input(net: Network, feature_response) -> np.ndarray:
    """Sum the input weights of the firing feature neurons, reshaped to the
    image and normalized to [0, 1] for display."""
    resp = np.asarray(feature_response, dtype=float)
    exc_in = next(p for p in net.projections if p.dst == 1 and p.exc_mask.any())
    img = ((resp > 0).astype(float) @ exc_in.exc_w)
    side = int(round(np.sqrt(img.size)))
    img = img.reshape(side, side)
    peak = img.max()
    return img / peak if peak > 0 else img


def _sweep_cell(args):
    (p_exc, p_inh, n_features, seed, train_images, train_labels,
     test_images, test_labels, steps) = args
    train = DigitStream(train_images, train_labels)
    test = DigitStream(test_images, test_labels)
    preset = preset_mnist(n_features=n_features, exc_kind="sparse", p_exc=p_exc,
                          p_inh_in=p_inh, inhibition="plastic")
    preset.horizon = steps
    report, _ = run_mnist(preset, train, test, seed=seed, train_readout=False)
    err = max(1.0 - report.decoder_accuracy, 1e-4)
    return p_exc, p_inh, float(np.log10(err))


def sweep_connectivity(p_exc_grid, p_inh_grid, n_features, train_stream, test_stream,
                       seed: int = 0, steps: int = 10000, n_jobs: int = 1):
    """Grid of log10 decoder error over input-layer connection
    probabilities, on a reduced stream budget per cell."""
    train = train_stream.tiled(steps) if len(train_stream) < steps else train_stream
    jobs = [(pe, pi, n_features, seed, train.images[:steps], train.labels[:steps],
             test_stream.images, test_stream.labels, steps)
            for pe in p_exc_grid for pi in p_inh_grid]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    surface = np.zeros((len(p_exc_grid), len(p_inh_grid)))
    for pe, pi, err in results:
        surface[list(p_exc_grid).index(pe), list(p_inh_grid).index(pi)] = err
    return surface
