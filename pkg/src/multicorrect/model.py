"""Toy non-autoregressive correction model over aligned candidates.

Data flow for one utterance with n aligned candidate rows of width L:

    embeddings (n, L, H) -> concat per column (L, n*H) -> Pre-Net linear (L, H)
    -> + positions -> Transformer encoder (L, H)
    per row r: concat(encoder out, row-r embeddings) (L, 2H)
        -> duration predictor  -> (L,)   durations of row r
        -> candidate predictor -> scalar predicted decoder loss of row r
    chosen row, expanded by its durations -> non-causal decoder -> logits
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import IO, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .align import AlignmentGrid, align_with
from .baselines import CANDIDATE_PREDICTOR, FIRST_BEAM, RANDOM, WER_ORACLE, SelectionStrategy, oracle_index, random_index
from .core import EMPTY, BeamSet, Sentence
from .duration import UnalignableError, adjust_source, grid_durations
from .phonetics import Lexicon

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "multicorrect-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int = 0
    hidden_size: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    attention_heads: int = 4
    feed_forward_size: int = 128
    beam_n: int = 4
    conv_layers_duration: int = 5
    conv_kernel: int = 3
    dropout: float = 0.1
    max_len: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size % self.attention_heads:
            raise ValueError("hidden_size must be divisible by attention_heads")
        if self.beam_n < 1:
            raise ValueError("beam_n must be >= 1")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**known)


class Vocab:
    PAD, UNK, EMPTY_ID = 0, 1, 2
    SPECIALS = ("<pad>", "<unk>", "<empty>")

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = list(self.SPECIALS)
        self.stoi: Dict[str, int] = {}
        for t in tokens:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)

    @classmethod
    def build(cls, beamsets: Iterable[BeamSet]) -> "Vocab":
        seen = set()
        for bs in beamsets:
            for c in bs.candidates:
                seen.update(c)
            if bs.reference is not None:
                seen.update(bs.reference)
        return cls(sorted(seen))

    def __len__(self):
        return len(self.itos)

    def tokens(self) -> List[str]:
        return self.itos[len(self.SPECIALS):]

    def encode(self, tok) -> int:
        if tok is EMPTY:
            return self.EMPTY_ID
        return self.stoi.get(tok, self.UNK)

    def decode(self, idx: int) -> Optional[str]:
        if idx < len(self.SPECIALS):
            return None
        return self.itos[idx]


def sinusoid_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe.to(dtype)


class ConvTrunk(nn.Module):
    """Stack of 1-D convolutions, each followed by ReLU, layer norm and dropout."""

    def __init__(self, in_dim, hidden, layers, kernel, dropout):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(in_dim if i == 0 else hidden, hidden, kernel, padding=kernel // 2) for i in range(layers)
        )
        self.norms = nn.ModuleList(nn.LayerNorm(hidden) for _ in range(layers))
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, keep):
        # x: (M, L, C); keep: (M, L) float, 1 at real positions
        keep = keep.unsqueeze(-1)
        for conv, norm in zip(self.convs, self.norms):
            x = x * keep
            x = F.relu(conv(x.transpose(1, 2))).transpose(1, 2)
            x = self.dropout(norm(x))
        return x * keep


class DurationPredictor(nn.Module):
    def __init__(self, in_dim, hidden, layers, kernel, dropout):
        super().__init__()
        self.trunk = ConvTrunk(in_dim, hidden, layers, kernel, dropout)
        self.fc1 = nn.Linear(hidden, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, x, keep):
        h = self.trunk(x, keep)
        return self.fc2(F.relu(self.fc1(h))).squeeze(-1)


class CandidatePredictor(nn.Module):
    """Same trunk as the duration predictor, mean-pooled over real positions."""

    def __init__(self, in_dim, hidden, layers, kernel, dropout):
        super().__init__()
        self.trunk = ConvTrunk(in_dim, hidden, layers, kernel, dropout)
        self.fc1 = nn.Linear(hidden, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, x, keep):
        h = self.trunk(x, keep)
        pooled = h.sum(1) / keep.sum(1, keepdim=True).clamp(min=1.0)
        return self.fc2(F.relu(self.fc1(pooled))).squeeze(-1)


class CorrectionModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.vocab_size <= len(Vocab.SPECIALS):
            raise ValueError("vocab_size must cover the special tokens plus at least one token")
        self.config = config
        H = config.hidden_size
        gen = torch.random.fork_rng(devices=[])
        with gen:
            torch.manual_seed(config.seed)
            self.embed = nn.Embedding(config.vocab_size, H, padding_idx=Vocab.PAD)
            nn.init.normal_(self.embed.weight, mean=0.0, std=H ** -0.5)
            with torch.no_grad():
                self.embed.weight[Vocab.PAD].zero_()
            self.prenet = nn.Linear(config.beam_n * H, H)
            enc_layer = nn.TransformerEncoderLayer(
                H, config.attention_heads, config.feed_forward_size, config.dropout, batch_first=True
            )
            self.encoder = nn.TransformerEncoder(enc_layer, config.encoder_layers, enable_nested_tensor=False)
            pred_args = (2 * H, H, config.conv_layers_duration, config.conv_kernel, config.dropout)
            self.duration_predictor = DurationPredictor(*pred_args)
            self.candidate_predictor = CandidatePredictor(*pred_args)
            dec_layer = nn.TransformerDecoderLayer(
                H, config.attention_heads, config.feed_forward_size, config.dropout, batch_first=True
            )
            self.decoder = nn.TransformerDecoder(dec_layer, config.decoder_layers)
            self.output = nn.Linear(H, config.vocab_size)
        self.dropout = nn.Dropout(config.dropout)

    def _positions(self, length, like):
        return sinusoid_positions(length, self.config.hidden_size, like.dtype).to(like.device)

    def encode(self, grid_ids, src_pad):
        """grid_ids (B, n, L) long, src_pad (B, L) bool -> (B, L, H)."""
        B, n, L = grid_ids.shape
        if n != self.config.beam_n:
            raise ValueError(f"grid has {n} rows, model expects beam_n={self.config.beam_n}")
        if L > self.config.max_len:
            raise ValueError(f"grid width {L} exceeds max_len={self.config.max_len}")
        emb = self.embed(grid_ids)  # B, n, L, H
        x = self.prenet(emb.permute(0, 2, 1, 3).reshape(B, L, n * self.config.hidden_size))
        x = self.dropout(x + self._positions(L, x))
        return self.encoder(x, src_key_padding_mask=src_pad)

    def predictor_input(self, enc, grid_ids):
        B, n, L = grid_ids.shape
        if enc.shape[:2] != (B, L):
            raise ValueError(f"encoder output {tuple(enc.shape)} does not match grid {tuple(grid_ids.shape)}")
        emb = self.embed(grid_ids)
        return torch.cat([enc.unsqueeze(1).expand(B, n, L, enc.shape[-1]), emb], dim=-1)

    def predict(self, enc, grid_ids, src_pad):
        """-> durations (B, n, L), predicted candidate losses (B, n)."""
        B, n, L = grid_ids.shape
        feats = self.predictor_input(enc, grid_ids).reshape(B * n, L, -1)
        keep = (~src_pad).to(enc.dtype).unsqueeze(1).expand(B, n, L).reshape(B * n, L)
        durs = self.duration_predictor(feats, keep).reshape(B, n, L) * keep.reshape(B, n, L)
        cand = self.candidate_predictor(feats, keep).reshape(B, n)
        return durs, cand

    def decode(self, dec_ids, dec_pad, memory, mem_pad):
        """Parallel (non-causal) decoding: dec_ids (M, T) -> logits (M, T, V)."""
        if dec_ids.shape[1] > self.config.max_len:
            raise ValueError(f"decoder input length {dec_ids.shape[1]} exceeds max_len={self.config.max_len}")
        x = self.embed(dec_ids)
        x = self.dropout(x + self._positions(dec_ids.shape[1], x))
        h = self.decoder(x, memory, tgt_key_padding_mask=dec_pad, memory_key_padding_mask=mem_pad)
        return self.output(h)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


# --- examples and batches -------------------------------------------------------


def fit_beam(beams: BeamSet, beam_n: int) -> BeamSet:
    """Truncate to beam_n candidates, or pad by repeating the last one."""
    cands = list(beams.candidates[:beam_n])
    while len(cands) < beam_n:
        cands.append(cands[-1])
    return BeamSet(beams.utterance_id, tuple(cands), beams.reference)


@dataclass
class TrainingExample:
    utterance_id: str
    grid: AlignmentGrid
    durations: List[Tuple[int, ...]]
    target: Sentence
    candidate_labels: Optional[List[float]] = None

    def __post_init__(self):
        if len(self.durations) != self.grid.n:
            raise ValueError(f"{self.utterance_id}: one duration row per grid row expected")
        for d in self.durations:
            if len(d) != self.grid.width:
                raise ValueError(f"{self.utterance_id}: duration row width != grid width")
            if sum(d) != len(self.target):
                raise ValueError(f"{self.utterance_id}: durations sum to {sum(d)}, target has {len(self.target)}")


def make_example(beams: BeamSet, lex: Lexicon, beam_n: int, align_method: str = "scored") -> TrainingExample:
    if beams.reference is None:
        raise ValueError(f"{beams.utterance_id}: training needs a reference")
    fitted = fit_beam(beams, beam_n)
    grid = align_with(fitted, lex, align_method)
    return TrainingExample(beams.utterance_id, grid, grid_durations(grid.rows, beams.reference, lex), beams.reference)


def make_examples(beamsets: Iterable[BeamSet], lex: Lexicon, beam_n: int, align_method: str = "scored") -> List[TrainingExample]:
    out = []
    skipped = 0
    for bs in beamsets:
        if not bs.reference:
            skipped += 1
            continue
        try:
            out.append(make_example(bs, lex, beam_n, align_method))
        except UnalignableError:
            skipped += 1
    if skipped:
        logger.info("skipped %d utterances with empty reference or candidate", skipped)
    return out


@dataclass
class Batch:
    grid_ids: torch.Tensor  # B, n, L
    src_pad: torch.Tensor  # B, L
    durations: torch.Tensor  # B, n, L (float)
    dec_ids: torch.Tensor  # B*n, T
    dec_pad: torch.Tensor  # B*n, T
    targets: torch.Tensor  # B*n, T


def _pad_2d(seqs: Sequence[Sequence[int]], width: int) -> torch.Tensor:
    out = torch.full((len(seqs), width), Vocab.PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        if s:
            out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out


def collate(examples: Sequence[TrainingExample], vocab: Vocab, beam_n: int, dtype=torch.float32) -> Batch:
    B = len(examples)
    L = max(ex.grid.width for ex in examples)
    T = max(len(ex.target) for ex in examples)
    grid_ids = torch.full((B, beam_n, L), Vocab.PAD, dtype=torch.long)
    src_pad = torch.ones(B, L, dtype=torch.bool)
    durs = torch.zeros(B, beam_n, L, dtype=dtype)
    dec_rows, tgt_rows = [], []
    for b, ex in enumerate(examples):
        if ex.grid.n != beam_n:
            raise ValueError(f"{ex.utterance_id}: grid has {ex.grid.n} rows, expected {beam_n}")
        w = ex.grid.width
        src_pad[b, :w] = False
        tgt = [vocab.encode(t) for t in ex.target]
        for r, (row, d) in enumerate(zip(ex.grid.rows, ex.durations)):
            grid_ids[b, r, :w] = torch.tensor([vocab.encode(t) for t in row], dtype=torch.long)
            durs[b, r, :w] = torch.tensor(d, dtype=dtype)
            adjusted = adjust_source(row, d)
            if len(adjusted) != len(ex.target):
                raise ValueError(f"{ex.utterance_id}: adjusted row length {len(adjusted)} != target length")
            dec_rows.append([vocab.encode(t) for t in adjusted])
            tgt_rows.append(tgt)
    dec_ids = _pad_2d(dec_rows, T)
    return Batch(grid_ids, src_pad, durs, dec_ids, dec_ids == Vocab.PAD, _pad_2d(tgt_rows, T))


@dataclass
class Losses:
    total: torch.Tensor
    decoder_ce: torch.Tensor
    duration: torch.Tensor
    candidate: torch.Tensor
    row_ce: torch.Tensor  # B, n (detached)

    def as_floats(self) -> Dict[str, float]:
        return {
            "total": float(self.total.detach()),
            "ce": float(self.decoder_ce.detach()),
            "duration_loss": float(self.duration.detach()),
            "candidate_loss": float(self.candidate.detach()),
        }


def compute_losses(
    model: CorrectionModel,
    batch: Batch,
    lambda_dur: float = 1.0,
    lambda_cand: float = 1.0,
    labels: Optional[torch.Tensor] = None,
) -> Losses:
    """Decoder CE on every row, duration MSE, and candidate-loss MSE.

    The candidate predictor regresses each row's decoder CE; that label is
    detached, or taken from `labels` when given (fixed labels make the total a
    plain function of the parameters, which gradient checking relies on).
    """
    B, n, L = batch.grid_ids.shape
    enc = model.encode(batch.grid_ids, batch.src_pad)
    pred_dur, pred_cand = model.predict(enc, batch.grid_ids, batch.src_pad)

    memory = enc.repeat_interleave(n, dim=0)
    mem_pad = batch.src_pad.repeat_interleave(n, dim=0)
    logits = model.decode(batch.dec_ids, batch.dec_pad, memory, mem_pad)
    tok_ce = F.cross_entropy(logits.transpose(1, 2), batch.targets, reduction="none")
    valid = (~batch.dec_pad).to(tok_ce.dtype)
    row_ce = ((tok_ce * valid).sum(1) / valid.sum(1).clamp(min=1.0)).reshape(B, n)
    decoder_ce = row_ce.mean()

    keep = (~batch.src_pad).to(pred_dur.dtype).unsqueeze(1).expand(B, n, L)
    dur_loss = (((pred_dur - batch.durations) ** 2) * keep).sum() / keep.sum()

    if labels is None:
        labels = row_ce.detach()
    cand_loss = F.mse_loss(pred_cand, labels)

    total = decoder_ce + lambda_dur * dur_loss + lambda_cand * cand_loss
    return Losses(total, decoder_ce, dur_loss, cand_loss, row_ce.detach())


def training_step(
    model: CorrectionModel,
    examples: Sequence[TrainingExample],
    vocab: Vocab,
    optimizer: torch.optim.Optimizer,
    lambda_dur: float = 1.0,
    lambda_cand: float = 1.0,
    clip_norm: Optional[float] = 1.0,
) -> Dict[str, float]:
    model.train()
    batch = collate(examples, vocab, model.config.beam_n, next(model.parameters()).dtype)
    losses = compute_losses(model, batch, lambda_dur, lambda_cand)
    optimizer.zero_grad()
    losses.total.backward()
    if clip_norm:
        nn.utils.clip_grad_norm_(model.parameters(), clip_norm)
    optimizer.step()
    # keep the per-row labels the candidate predictor was trained against
    for ex, ce in zip(examples, losses.row_ce.tolist()):
        ex.candidate_labels = ce
    return losses.as_floats()


# --- single-utterance operations ------------------------------------------------


def _grid_tensor(grid: AlignmentGrid, vocab: Vocab, beam_n: int) -> Tuple[torch.Tensor, torch.Tensor]:
    if grid.n != beam_n:
        raise ValueError(f"grid has {grid.n} rows, model expects beam_n={beam_n}")
    ids = torch.tensor([[vocab.encode(t) for t in r] for r in grid.rows], dtype=torch.long).unsqueeze(0)
    return ids, torch.zeros(1, grid.width, dtype=torch.bool)


def prenet_encode(grid: AlignmentGrid, model: CorrectionModel, vocab: Vocab) -> torch.Tensor:
    """Encoder output (L, H) for one grid."""
    ids, pad = _grid_tensor(grid, vocab, model.config.beam_n)
    return model.encode(ids, pad)[0]


def predict_durations(enc: torch.Tensor, grid: AlignmentGrid, model: CorrectionModel, vocab: Vocab) -> torch.Tensor:
    ids, pad = _grid_tensor(grid, vocab, model.config.beam_n)
    if enc.shape != (grid.width, model.config.hidden_size):
        raise ValueError(f"encoder output shape {tuple(enc.shape)} does not match grid width {grid.width}")
    return model.predict(enc.unsqueeze(0), ids, pad)[0][0]


def predict_candidate_loss(enc: torch.Tensor, grid: AlignmentGrid, model: CorrectionModel, vocab: Vocab) -> torch.Tensor:
    ids, pad = _grid_tensor(grid, vocab, model.config.beam_n)
    if enc.shape != (grid.width, model.config.hidden_size):
        raise ValueError(f"encoder output shape {tuple(enc.shape)} does not match grid width {grid.width}")
    return model.predict(enc.unsqueeze(0), ids, pad)[1][0]


def decode_parallel(adjusted: Sequence[str], enc: torch.Tensor, model: CorrectionModel, vocab: Vocab) -> torch.Tensor:
    """Logits (len(adjusted), V) from one non-causal decoder pass."""
    if not adjusted:
        raise ValueError("decoder input is empty")
    dec = torch.tensor([[vocab.encode(t) for t in adjusted]], dtype=torch.long)
    mem_pad = torch.zeros(1, enc.shape[0], dtype=torch.bool)
    return model.decode(dec, dec == Vocab.PAD, enc.unsqueeze(0), mem_pad)[0]


def round_durations(raw: Sequence[float], row: Optional[Sequence] = None) -> List[int]:
    """Round half up, floor at 0; empty cells get 0; never all zero on a non-empty row."""
    raw = [float(x) for x in raw]
    real = [i for i in range(len(raw)) if row is None or row[i] is not EMPTY]
    out = [0] * len(raw)
    for i in real:
        out[i] = max(0, int(math.floor(raw[i] + 0.5)))
    if real and not any(out):
        out[max(real, key=lambda i: raw[i])] = 1
    return out


# --- inference ---------------------------------------------------------------------


@dataclass
class Correction:
    utterance_id: str
    text: Sentence
    chosen: int
    predicted_losses: List[float] = field(default_factory=list)


def _choose(kind: str, beams: BeamSet, pred: Sequence[float], seed: int) -> int:
    if kind == CANDIDATE_PREDICTOR:
        return int(np.argmin(pred))
    if kind == FIRST_BEAM:
        return 0
    if kind == RANDOM:
        return random_index(beams, seed)
    if kind == WER_ORACLE:
        if beams.reference is None:
            raise ValueError(f"strategy {kind!r} needs a reference for {beams.utterance_id}")
        return oracle_index(beams)
    raise ValueError(f"unknown strategy {kind!r}")


@torch.no_grad()
def correct_batch(
    model: CorrectionModel,
    vocab: Vocab,
    beamsets: Sequence[BeamSet],
    lex: Lexicon,
    strategy: SelectionStrategy = SelectionStrategy(CANDIDATE_PREDICTOR),
    align_method: str = "scored",
    batch_size: int = 64,
) -> List[Correction]:
    """Correct many utterances; the output order follows the input order."""
    model.eval()
    beam_n = model.config.beam_n
    dtype = next(model.parameters()).dtype
    results: List[Correction] = []
    for start in range(0, len(beamsets), batch_size):
        chunk = beamsets[start : start + batch_size]
        fitted = [fit_beam(bs, beam_n) for bs in chunk]
        grids = [align_with(bs, lex, align_method) for bs in fitted]
        B, L = len(grids), max(max(g.width for g in grids), 1)
        ids = torch.full((B, beam_n, L), Vocab.PAD, dtype=torch.long)
        pad = torch.ones(B, L, dtype=torch.bool)
        for b, g in enumerate(grids):
            pad[b, : g.width] = False
            for r, row in enumerate(g.rows):
                if row:
                    ids[b, r, : g.width] = torch.tensor([vocab.encode(t) for t in row])
        # an all-padding row would make attention produce NaNs
        pad[:, 0] = False
        enc = model.encode(ids, pad)
        durs, cand = model.predict(enc, ids, pad)

        dec_rows, chosen_idx = [], []
        for b, (bs, g) in enumerate(zip(fitted, grids)):
            # only real candidates compete; padded repeats are never preferred over the original
            n_real = min(chunk[b].n, beam_n)
            pred = cand[b, :n_real].tolist()
            k = _choose(strategy.kind, chunk[b], pred, strategy.seed if strategy.seed is not None else 0)
            k = min(k, n_real - 1)
            row = g.rows[k]
            d = round_durations(durs[b, k, : g.width].tolist(), row)
            adjusted = adjust_source(row, d)[: model.config.max_len]
            dec_rows.append([vocab.encode(t) for t in adjusted])
            chosen_idx.append((k, pred))
        T = max(max(len(r) for r in dec_rows), 1)
        dec = _pad_2d(dec_rows, T)
        dec_pad = dec == Vocab.PAD
        dec_pad[:, 0] = False
        logits = model.decode(dec, dec_pad, enc, pad)
        best = logits.argmax(-1)
        for b, bs in enumerate(chunk):
            n_tok = len(dec_rows[b])
            toks = []
            for i in best[b, :n_tok].tolist():
                t = vocab.decode(i)
                if t is not None:
                    toks.append(t)
            k, pred = chosen_idx[b]
            results.append(Correction(bs.utterance_id, tuple(toks), k, pred))
    return results


def infer(
    beams: BeamSet,
    lex: Lexicon,
    model: CorrectionModel,
    vocab: Vocab,
    strategy: SelectionStrategy = SelectionStrategy(CANDIDATE_PREDICTOR),
    align_method: str = "scored",
) -> Sentence:
    if beams.n < 1:
        raise ValueError("no candidates")
    return correct_batch(model, vocab, [beams], lex, strategy, align_method)[0].text


@torch.no_grad()
def predict_losses_for(model: CorrectionModel, beamsets: Sequence[BeamSet], lex: Lexicon, vocab: Vocab, align_method: str = "scored") -> List[List[float]]:
    return [c.predicted_losses for c in correct_batch(model, vocab, beamsets, lex, SelectionStrategy(FIRST_BEAM), align_method)]


# --- training loop and checkpoints --------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    lr: float = 1e-3
    lambda_dur: float = 1.0
    lambda_cand: float = 1.0
    clip_norm: float = 1.0
    seed: int = 0
    align_method: str = "scored"

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def batch_order(n_examples: int, batch_size: int, seed: int, step: int) -> List[int]:
    """Example indices for global step `step`; a pure function of its arguments."""
    per_epoch = max(1, math.ceil(n_examples / batch_size))
    epoch, offset = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n_examples)
    return perm[offset * batch_size : (offset + 1) * batch_size].tolist()


class Trainer:
    def __init__(self, model: CorrectionModel, vocab: Vocab, examples: List[TrainingExample], cfg: TrainConfig):
        if not examples:
            raise ValueError("no training examples")
        self.model, self.vocab, self.examples, self.cfg = model, vocab, examples, cfg
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        self.step = 0
        torch.manual_seed(cfg.seed)

    def run(self, until: Optional[int] = None, log: Optional[IO[str]] = None, every: int = 1) -> List[Dict[str, float]]:
        until = self.cfg.steps if until is None else until
        history = []
        while self.step < until:
            idx = batch_order(len(self.examples), self.cfg.batch_size, self.cfg.seed, self.step)
            rec = training_step(
                self.model,
                [self.examples[i] for i in idx],
                self.vocab,
                self.optimizer,
                self.cfg.lambda_dur,
                self.cfg.lambda_cand,
                self.cfg.clip_norm,
            )
            self.step += 1
            rec = {"step": self.step, **rec}
            history.append(rec)
            if log is not None and (self.step % every == 0 or self.step == until):
                log.write(json.dumps(rec) + "\n")
        return history

    def state(self) -> dict:
        return {
            "optimizer": self.optimizer.state_dict(),
            "step": self.step,
            "torch_rng": torch.get_rng_state(),
            "train_config": asdict(self.cfg),
        }

    def restore(self, state: dict):
        self.optimizer.load_state_dict(state["optimizer"])
        self.step = int(state["step"])
        torch.set_rng_state(state["torch_rng"])


def save_checkpoint(path, model: CorrectionModel, vocab: Vocab, trainer: Optional[Trainer] = None, extra: Optional[dict] = None):
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab": vocab.tokens(),
        "state_dict": model.state_dict(),
        "trainer": trainer.state() if trainer is not None else None,
        "extra": extra or {},
    }
    torch.save(blob, path)


def load_checkpoint(path) -> Tuple[CorrectionModel, Vocab, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a correction-model checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    vocab = Vocab(blob["vocab"])
    config = ModelConfig.from_dict(blob["config"])
    if config.vocab_size != len(vocab):
        raise ValueError(f"{path}: vocabulary has {len(vocab)} entries, config says {config.vocab_size}")
    model = CorrectionModel(config)
    model.load_state_dict(blob["state_dict"])
    return model, vocab, blob


# --- gradient check ---------------------------------------------------------------


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        vocab_size=12,
        hidden_size=8,
        encoder_layers=1,
        decoder_layers=1,
        attention_heads=2,
        feed_forward_size=16,
        beam_n=3,
        conv_layers_duration=2,
        conv_kernel=3,
        dropout=0.0,
        seed=0,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_examples(vocab_size: int, beam_n: int, seed: int, count: int = 2) -> Tuple[Vocab, List[TrainingExample]]:
    """Random noised sentences over vocab_size - 3 surface tokens, aligned with durations."""
    from .noising import NoiseProfile, build_homophone_table, rng_for, simulate_beams

    words = [f"w{i}" for i in range(vocab_size - len(Vocab.SPECIALS))]
    vocab = Vocab(words)
    lex = Lexicon()
    table = build_homophone_table(lex, 0, vocab=words)
    profile = NoiseProfile(0.3, (0.3, 0.3, 0.4), seed)
    rng = rng_for(seed, "tiny")
    beams = []
    while len(beams) < count:
        n_tok = int(rng.integers(3, 7))
        target = tuple(words[i] for i in rng.integers(len(words), size=n_tok))
        beams.append(simulate_beams(target, beam_n, profile, table, rng, f"t{len(beams)}"))
    return vocab, make_examples(beams, lex, beam_n)


def gradient_check(config: Optional[ModelConfig] = None, seed: int = 0, n_coords: int = 256, eps: float = 1e-6) -> float:
    """Max relative error between autograd and central differences.

    Runs in float64 with dropout disabled and candidate labels frozen at the
    initial parameters, over `n_coords` randomly sampled parameter coordinates.
    """
    config = config or tiny_config(seed=seed)
    if config.dropout != 0:
        raise ValueError("gradient check needs dropout=0")
    model = CorrectionModel(config).double()
    model.train()
    vocab, examples = tiny_examples(config.vocab_size, config.beam_n, seed)
    batch = collate(examples, vocab, config.beam_n, torch.float64)
    with torch.no_grad():
        labels = compute_losses(model, batch).row_ce.clone()

    model.zero_grad()
    compute_losses(model, batch, labels=labels).total.backward()
    params = [p for p in model.parameters() if p.requires_grad]
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([0] + sizes)

    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            p = params[k]
            idx = int(flat - offsets[k])
            analytic = float(p.grad.reshape(-1)[idx])
            view = p.data.view(-1)
            orig = float(view[idx])
            view[idx] = orig + eps
            up = float(compute_losses(model, batch, labels=labels).total)
            view[idx] = orig - eps
            down = float(compute_losses(model, batch, labels=labels).total)
            view[idx] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(analytic), abs(numeric), 1e-7)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
