"""Independent numpy forward passes used as oracles against the autodiff models.

Everything here is written directly from the math, without touching the
tape-based implementation, so agreement between the two routes is meaningful.
"""

import numpy as np


def logistic(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def lstm_forward(x: np.ndarray, weights: dict, biases: dict) -> np.ndarray:
    """Unrolled LSTM over [B x T x in]; returns the hidden sequence [B x T x H]."""
    batch, n_steps, _ = x.shape
    hidden_dim = weights["input"].shape[1]
    h = np.zeros((batch, hidden_dim))
    c = np.zeros((batch, hidden_dim))
    out = np.empty((batch, n_steps, hidden_dim))
    for t in range(n_steps):
        xh = np.concatenate([x[:, t, :], h], axis=1)
        gate_i = logistic(xh @ weights["input"] + biases["input"])
        gate_f = logistic(xh @ weights["forget"] + biases["forget"])
        gate_o = logistic(xh @ weights["output"] + biases["output"])
        cand = np.tanh(xh @ weights["candidate"] + biases["candidate"])
        c = gate_f * c + gate_i * cand
        h = gate_o * np.tanh(c)
        out[:, t, :] = h
    return out


def layer_arrays(lstm) -> tuple[dict, dict]:
    weights = {k: t.values for k, t in lstm.weights.items()}
    biases = {k: t.values for k, t in lstm.biases.items()}
    return weights, biases


def generator_forward(gen, z: np.ndarray, cond: np.ndarray) -> np.ndarray:
    weights, biases = layer_arrays(gen.lstm)
    hidden = lstm_forward(np.concatenate([z, cond], axis=2), weights, biases)
    batch, n_steps, hidden_dim = hidden.shape
    flat = hidden.reshape(batch * n_steps, hidden_dim)
    out = np.tanh(flat @ gen.head.weight.values + gen.head.bias.values)
    return out.reshape(batch, n_steps, gen.n_channels)


def discriminator_forward(disc, x: np.ndarray, cond: np.ndarray) -> np.ndarray:
    weights, biases = layer_arrays(disc.lstm)
    hidden = lstm_forward(np.concatenate([x, cond], axis=2), weights, biases)
    logits = hidden[:, -1, :] @ disc.head.weight.values + disc.head.bias.values
    return logistic(logits.ravel())


def bce(p: np.ndarray, y: np.ndarray, eps: float = 1e-7) -> float:
    clamped = np.clip(p, eps, 1.0 - eps)
    return float(np.mean(-(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped))))
