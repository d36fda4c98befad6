"""Task heads, the AdamW optimizer, and the training loop.

Three tasks share one harness: sentiment classification (a linear head on
the last real token's hidden state), paraphrase detection as a cloze over
yes/no verbalizer tokens, and next-token language modeling over poems.
Training is deterministic given the seed: batch order, dropout masks and
initialization all come from seeded generators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import accuracy, corpus_chrf
from .model import GPT
from .tensor import (
    Parameter,
    Tensor,
    cross_entropy,
    gather_positions,
    linear,
    no_grad,
    softmax_rows,
    take_columns,
)
from .tokenizer import BpeVocab, encode

__all__ = [
    "TrainConfig",
    "TrainingError",
    "AdamW",
    "clip_global_norm",
    "SentimentClassifier",
    "sentiment_forward",
    "paraphrase_cloze_forward",
    "cloze_prompt",
    "SentimentTask",
    "ParaphraseTask",
    "SonnetTask",
    "train_loop",
    "pad_batch",
]

PAD_ID = 0

CLOZE_TEMPLATE = "Question 1: {q1}\nQuestion 2: {q2}\nAre these questions paraphrases? Answer:"


class TrainingError(RuntimeError):
    """Non-finite loss or gradient, or an invalid training setup."""


@dataclass
class TrainConfig:
    """Optimization hyperparameters with the tuned defaults."""

    learning_rate: float = 1e-5
    dropout_p: float = 0.5
    weight_decay: float = 0.2
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    lora_r: int = 32
    lora_alpha: float = 64.0
    ffn_kind: str = "mlp"
    early_stop_patience: int = 3
    max_steps: int | None = None
    grad_clip: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("learning_rate", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


class AdamW:
    """Adam with decoupled weight decay.

    Decay multiplies each decayable weight by ``(1 - lr * weight_decay)``
    before the Adam delta is applied. Only trainable parameters hold
    optimizer state; frozen parameters are never touched. Biases and
    normalization parameters are excluded from decay via their ``decay``
    flag.
    """

    def __init__(
        self,
        params: dict[str, Parameter],
        lr: float = 1e-5,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = {name: p for name, p in params.items() if p.trainable}
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.tensor.grad = None

    def step(self):
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.tensor.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            if self.weight_decay != 0.0 and p.decay:
                p.data *= p.data.dtype.type(1.0 - self.lr * self.weight_decay)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


def clip_global_norm(params: dict[str, Parameter], max_norm: float) -> float:
    """Scale all trainable gradients so their global L2 norm is <= max_norm."""
    sq = 0.0
    grads = []
    for p in params.values():
        if p.trainable and p.tensor.grad is not None:
            grads.append(p.tensor.grad)
            sq += float((p.tensor.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(sq))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads:
            g *= g.dtype.type(scale)
    return norm


# -- task heads ------------------------------------------------------------


class SentimentClassifier:
    """GPT backbone plus a linear classification head over C classes."""

    def __init__(self, gpt: GPT, n_classes: int, seed: int = 0):
        self.gpt = gpt
        self.n_classes = n_classes
        rng = np.random.default_rng(seed + 1)
        dtype = gpt.tok_emb.data.dtype
        self.head_weight = Parameter("head.weight", rng.normal(0.0, 0.02, size=(n_classes, gpt.cfg.d_model)).astype(dtype))
        self.head_bias = Parameter("head.bias", np.zeros(n_classes, dtype=dtype), decay=False)
        self._params = dict(gpt.named_parameters())
        for p in (self.head_weight, self.head_bias):
            if p.name in self._params:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            self._params[p.name] = p

    @property
    def cfg(self):
        return self.gpt.cfg

    @property
    def training(self):
        return self.gpt.training

    def named_parameters(self) -> dict[str, Parameter]:
        return self._params

    def param_counts(self) -> tuple[int, int]:
        total = sum(p.data.size for p in self._params.values())
        trainable = sum(p.data.size for p in self._params.values() if p.trainable)
        return total, trainable

    def train(self):
        self.gpt.train()
        return self

    def eval(self):
        self.gpt.eval()
        return self

    def __call__(self, tokens: np.ndarray, lengths: np.ndarray) -> Tensor:
        return sentiment_forward(self, tokens, lengths)


def sentiment_forward(model: SentimentClassifier, tokens: np.ndarray, lengths: np.ndarray) -> Tensor:
    """Class logits (B, C) read from the last non-padding token's state."""
    hidden = model.gpt.forward_hidden(tokens)
    last = gather_positions(hidden, np.asarray(lengths) - 1)
    return linear(last, model.head_weight.tensor, model.head_bias.tensor)


def pad_batch(seqs: list[list[int]], pad_id: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to the longest sequence; returns (ids, lengths)."""
    lengths = np.asarray([len(s) for s in seqs], dtype=np.int64)
    t = int(lengths.max())
    out = np.full((len(seqs), t), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


# -- paraphrase cloze ---------------------------------------------------------


def _verbalizers(vocab: BpeVocab) -> tuple[list[int], int, int]:
    """Shared prompt suffix plus the first differing yes/no token ids.

    With a merged vocabulary " yes" and " no" differ at their first token.
    The byte-level fallback shares a leading space token, so the common
    prefix is appended to the prompt and the next ids ('y' vs 'n') become
    the verbalizers.
    """
    yes_ids = encode(" yes", vocab)
    no_ids = encode(" no", vocab)
    common = 0
    while common < min(len(yes_ids), len(no_ids)) and yes_ids[common] == no_ids[common]:
        common += 1
    if common >= len(yes_ids) or common >= len(no_ids):
        raise ValueError("vocabulary cannot distinguish the yes/no verbalizers")
    return yes_ids[:common], yes_ids[common], no_ids[common]


def cloze_prompt(q1: str, q2: str, vocab: BpeVocab) -> tuple[list[int], int, int]:
    """Token ids of the filled template plus the (yes, no) verbalizer ids."""
    prefix, yes_id, no_id = _verbalizers(vocab)
    prompt = encode(CLOZE_TEMPLATE.format(q1=q1, q2=q2), vocab) + prefix
    return prompt, yes_id, no_id


def paraphrase_cloze_forward(model: GPT, q1: str, q2: str, vocab: BpeVocab) -> tuple[float, float]:
    """(p_yes, p_no) from the next-token logits of the verbalizer pair."""
    prompt, yes_id, no_id = cloze_prompt(q1, q2, vocab)
    if len(prompt) > model.cfg.max_seq_len:
        raise ValueError(
            f"cloze prompt of {len(prompt)} tokens exceeds max_seq_len {model.cfg.max_seq_len} "
            f"(question lengths {len(q1)}, {len(q2)})"
        )
    with no_grad():
        logits = model.lm_forward(np.asarray([prompt])).data[0, -1]
    pair = logits[[yes_id, no_id]].astype(np.float64)
    pair -= pair.max()
    e = np.exp(pair)
    p = e / e.sum()
    return float(p[0]), float(p[1])


# -- tasks -------------------------------------------------------------------


class SentimentTask:
    """Batches sentences, trains with C-way cross-entropy, reports accuracy."""

    name = "sentiment"
    metric_name = "accuracy"

    def __init__(self, train_records, dev_records, vocab: BpeVocab, n_classes: int, max_seq_len: int):
        self.vocab = vocab
        self.n_classes = n_classes
        self.train_records = train_records
        self.dev_records = dev_records
        self.max_seq_len = max_seq_len
        self._cache: dict[str, list[int]] = {}

    def _ids(self, text: str) -> list[int]:
        ids = self._cache.get(text)
        if ids is None:
            ids = encode(text, self.vocab)[: self.max_seq_len]
            self._cache[text] = ids
        return ids

    def n_train(self) -> int:
        return len(self.train_records)

    def loss(self, model: SentimentClassifier, indices: np.ndarray) -> Tensor:
        recs = [self.train_records[i] for i in indices]
        tokens, lengths = pad_batch([self._ids(r["sentence"]) for r in recs])
        logits = sentiment_forward(model, tokens, lengths)
        labels = np.asarray([r["label"] for r in recs], dtype=np.int64)
        return cross_entropy(logits, labels)

    def predictions(self, model: SentimentClassifier, records) -> list[int]:
        preds = []
        with no_grad():
            for start in range(0, len(records), 32):
                chunk = records[start : start + 32]
                tokens, lengths = pad_batch([self._ids(r["sentence"]) for r in chunk])
                logits = sentiment_forward(model, tokens, lengths).data
                preds.extend(int(i) for i in np.argmax(logits, axis=-1))
        return preds

    def evaluate(self, model: SentimentClassifier, records=None) -> float:
        records = self.dev_records if records is None else records
        preds = self.predictions(model, records)
        return accuracy(preds, [r["label"] for r in records])


class ParaphraseTask:
    """Cloze-style binary classification over yes/no verbalizer logits."""

    name = "paraphrase"
    metric_name = "accuracy"

    def __init__(self, train_records, dev_records, vocab: BpeVocab, max_seq_len: int):
        self.vocab = vocab
        self.train_records = train_records
        self.dev_records = dev_records
        self.max_seq_len = max_seq_len
        self.prefix, self.yes_id, self.no_id = _verbalizers(vocab)

    def n_train(self) -> int:
        return len(self.train_records)

    def _prompt(self, r) -> list[int]:
        prompt = encode(CLOZE_TEMPLATE.format(q1=r["question1"], q2=r["question2"]), self.vocab) + self.prefix
        if len(prompt) > self.max_seq_len:
            raise ValueError(
                f"cloze prompt of {len(prompt)} tokens exceeds max_seq_len {self.max_seq_len} "
                f"(question lengths {len(r['question1'])}, {len(r['question2'])})"
            )
        return prompt

    def _pair_logits(self, model: GPT, records) -> Tensor:
        tokens, lengths = pad_batch([self._prompt(r) for r in records])
        hidden = model.forward_hidden(tokens)
        last = gather_positions(hidden, lengths - 1)
        logits = linear(last, model.tok_emb.tensor)
        return take_columns(logits, [self.yes_id, self.no_id])

    def loss(self, model: GPT, indices: np.ndarray) -> Tensor:
        recs = [self.train_records[i] for i in indices]
        pair = self._pair_logits(model, recs)
        # column 0 is "yes", so duplicates (label 1) target index 0
        targets = np.asarray([0 if r["is_duplicate"] else 1 for r in recs], dtype=np.int64)
        return cross_entropy(pair, targets)

    def predictions(self, model: GPT, records) -> list[int]:
        preds = []
        with no_grad():
            for start in range(0, len(records), 32):
                chunk = records[start : start + 32]
                pair = self._pair_logits(model, chunk).data
                preds.extend(1 if row[0] >= row[1] else 0 for row in pair)
        return preds

    def evaluate(self, model: GPT, records=None) -> float:
        records = self.dev_records if records is None else records
        preds = self.predictions(model, records)
        return accuracy(preds, [int(r["is_duplicate"]) for r in records])


class SonnetTask:
    """Next-token modeling over whole poems; evaluation scores generated
    completions of held-out poems (given their first three lines) with the
    corpus-level character n-gram metric."""

    name = "sonnet"
    metric_name = "chrf"

    def __init__(
        self,
        train_records,
        dev_records,
        vocab: BpeVocab,
        max_seq_len: int,
        prompt_lines: int = 3,
        gen_tokens: int = 64,
        temperature: float = 1.2,
        top_p: float = 0.9,
    ):
        self.vocab = vocab
        self.train_records = train_records
        self.dev_records = dev_records
        self.max_seq_len = max_seq_len
        self.prompt_lines = prompt_lines
        self.gen_tokens = gen_tokens
        self.temperature = temperature
        self.top_p = top_p
        self.eot = vocab.end_of_text_id

    def n_train(self) -> int:
        return len(self.train_records)

    def _ids(self, poem: str) -> list[int]:
        ids = encode(poem, self.vocab)
        if self.eot is not None:
            ids = ids + [self.eot]
        return ids[: self.max_seq_len]

    def loss(self, model: GPT, indices: np.ndarray) -> Tensor:
        seqs = [self._ids(self.train_records[i]) for i in indices]
        tokens, lengths = pad_batch(seqs)
        logits = model.lm_forward(tokens[:, :-1])
        b, tm1, v = logits.shape
        targets = tokens[:, 1:].copy()
        for i, n in enumerate(lengths):
            targets[i, n - 1 :] = -1  # padding positions carry no loss
        from .tensor import reshape

        flat = reshape(logits, (b * tm1, v))
        return cross_entropy(flat, targets.reshape(-1), ignore_index=-1)

    def evaluate(self, model: GPT, records=None, seed: int = 0) -> float:
        records = self.dev_records if records is None else records
        from .tokenizer import decode

        pairs = []
        for i, poem in enumerate(records):
            lines = poem.splitlines()
            prompt_text = "\n".join(lines[: self.prompt_lines])
            reference = "\n".join(lines[self.prompt_lines :])
            if not reference.strip():
                continue
            prompt = encode(prompt_text, self.vocab)[: self.max_seq_len // 2]
            out = model.generate(
                prompt,
                max_new_tokens=self.gen_tokens,
                temperature=self.temperature,
                top_p=self.top_p,
                seed=seed + i,
                end_of_text_id=self.eot,
            )
            completion = decode([t for t in out[len(prompt):] if t != self.eot], self.vocab)
            pairs.append((completion, reference))
        if not pairs:
            raise ValueError("no dev poem has lines beyond the prompt")
        return corpus_chrf(pairs)


# -- the loop ----------------------------------------------------------------


def train_loop(model, task, cfg: TrainConfig, writer=None) -> list[dict]:
    """Train with per-epoch dev evaluation and early stopping.

    Batch order is a seeded permutation per epoch. The dev metric is
    evaluated after every epoch; when it fails to improve for
    ``early_stop_patience`` consecutive evaluations, training stops and the
    best-scoring parameters are restored. Returns the metric records.
    """
    n = task.n_train()
    if n == 0:
        raise TrainingError("training dataset is empty")
    params = model.named_parameters()
    opt = AdamW(
        params,
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
    )
    rng = np.random.default_rng(cfg.seed)
    records: list[dict] = []
    step = 0
    best_metric = -np.inf
    best_state = {name: p.data.copy() for name, p in params.items()}
    stale = 0
    stop = False

    def emit(rec):
        records.append(rec)
        if writer is not None:
            writer.write(rec)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        model.train()
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss = task.loss(model, batch)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step}")
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                clip_global_norm(params, cfg.grad_clip)
            opt.step()
            step += 1
            emit({
                "step": step,
                "epoch": epoch,
                "task": task.name,
                "split": "train",
                "metric": "loss",
                "value": value,
                "ffn_kind": cfg.ffn_kind,
            })
            if cfg.max_steps is not None and step >= cfg.max_steps:
                stop = True
                break
        model.eval()
        metric = task.evaluate(model)
        emit({
            "step": step,
            "epoch": epoch,
            "task": task.name,
            "split": "dev",
            "metric": task.metric_name,
            "value": float(metric),
            "ffn_kind": cfg.ffn_kind,
        })
        if metric > best_metric:
            best_metric = metric
            best_state = {name: p.data.copy() for name, p in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                stop = True
        if writer is not None:
            writer.flush()
        if stop:
            break

    for name, p in params.items():
        p.data[...] = best_state[name]
    model.eval()
    return records
