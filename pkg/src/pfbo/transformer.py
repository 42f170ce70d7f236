"""Set-conditioned transformer encoder with a bucket-classification head.

Observation tokens embed ``(x, y)``; query tokens embed ``x`` plus a learned
"no target" vector.  There are no positional encodings.  Observation tokens
attend to all observation tokens, query tokens attend to the observations and
to themselves, so queries never see each other.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from pfbo import tensor as T


class MaskedSetAttention(nn.Module):
    def __init__(self, emb: int, heads: int):
        super().__init__()
        if emb % heads:
            raise ValueError(f"embedding width {emb} not divisible by {heads} heads")
        self.emb, self.heads, self.head_dim = emb, heads, emb // heads
        self.qkv = nn.Linear(emb, 3 * emb)
        self.out = nn.Linear(emb, emb)

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        b, n, _ = t.shape
        return t.reshape(b, n, self.heads, self.head_dim).transpose(1, 2)

    def _merge(self, t: torch.Tensor) -> torch.Tensor:
        b, h, n, k = t.shape
        return t.transpose(1, 2).reshape(b, n, h * k)

    def _project(self, x):
        q, k, v = T.linear(x, self.qkv.weight, self.qkv.bias).chunk(3, dim=-1)
        return self._split(q), self._split(k), self._split(v)

    def forward(self, obs: torch.Tensor, qry: torch.Tensor):
        scale = 1.0 / math.sqrt(self.head_dim)
        qq, kq, vq = self._project(qry)
        self_score = (qq * kq).sum(-1, keepdim=True) * scale
        if obs.shape[1] == 0:
            out_o = obs
            out_q = vq
        else:
            qo, ko, vo = self._project(obs)
            att_o = T.softmax(T.matmul(qo, ko.transpose(-1, -2)) * scale)
            out_o = T.matmul(att_o, vo)
            cross = T.matmul(qq, ko.transpose(-1, -2)) * scale
            att_q = T.softmax(torch.cat([cross, self_score], dim=-1))
            n_obs = obs.shape[1]
            out_q = T.matmul(att_q[..., :n_obs], vo) + att_q[..., n_obs:] * vq
        out_o = T.linear(self._merge(out_o), self.out.weight, self.out.bias) if obs.shape[1] else obs
        out_q = T.linear(self._merge(out_q), self.out.weight, self.out.bias)
        return out_o, out_q

    def forward_dense(self, obs: torch.Tensor, qry: torch.Tensor):
        """Reference path: full attention over all tokens with an explicit mask."""
        n_obs, n_q = obs.shape[1], qry.shape[1]
        x = torch.cat([obs, qry], dim=1)
        q, k, v = self._project(x)
        scores = T.matmul(q, k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        n = n_obs + n_q
        blocked = torch.ones(n, n, dtype=torch.bool)
        blocked[:, :n_obs] = False
        idx = torch.arange(n_obs, n)
        blocked[idx, idx] = False
        out = T.matmul(T.softmax(T.masked_fill(scores, blocked, float("-inf"))), v)
        out = T.linear(self._merge(out), self.out.weight, self.out.bias)
        return out[:, :n_obs], out[:, n_obs:]


class EncoderBlock(nn.Module):
    """attention -> residual -> layer norm -> GELU feed-forward -> residual -> layer norm"""

    def __init__(self, emb: int, heads: int, hidden: int):
        super().__init__()
        self.attn = MaskedSetAttention(emb, heads)
        self.norm1 = nn.LayerNorm(emb)
        self.ff1 = nn.Linear(emb, hidden)
        self.ff2 = nn.Linear(hidden, emb)
        self.norm2 = nn.LayerNorm(emb)

    def _ln(self, norm, x):
        return T.layer_norm(x, norm.weight, norm.bias, norm.eps)

    def _ff(self, x):
        h = T.gelu(T.linear(x, self.ff1.weight, self.ff1.bias))
        return T.linear(h, self.ff2.weight, self.ff2.bias)

    def forward(self, obs, qry, dense: bool = False):
        a_o, a_q = (self.attn.forward_dense if dense else self.attn)(obs, qry)
        obs = self._ln(self.norm1, obs + a_o)
        qry = self._ln(self.norm1, qry + a_q)
        obs = self._ln(self.norm2, obs + self._ff(obs))
        qry = self._ln(self.norm2, qry + self._ff(qry))
        return obs, qry


class SetTransformer(nn.Module):
    def __init__(self, d: int, emb: int, layers: int, heads: int, hidden: int, n_buckets: int):
        super().__init__()
        self.d = d
        self.x_embed = nn.Linear(d, emb)
        self.y_embed = nn.Linear(1, emb)
        self.no_target = nn.Parameter(torch.zeros(emb))
        self.blocks = nn.ModuleList(EncoderBlock(emb, heads, hidden) for _ in range(layers))
        self.head = nn.Linear(emb, n_buckets)
        nn.init.normal_(self.no_target, std=0.02)

    def forward(self, x_obs: torch.Tensor, y_obs: torch.Tensor, x_qry: torch.Tensor, dense: bool = False):
        """Bucket logits ``[batch, n_query, n_buckets]``.

        ``x_obs`` is ``[batch, n_obs, d]``, ``y_obs`` is ``[batch, n_obs]``
        (already standardised) and ``x_qry`` is ``[batch, n_query, d]``.
        """
        if x_obs.shape[-1] != self.d or x_qry.shape[-1] != self.d:
            raise T.ShapeError(f"model expects {self.d}-dimensional inputs")
        if y_obs.shape != x_obs.shape[:-1]:
            raise T.ShapeError("y_obs must have one target per observation")
        obs = T.linear(x_obs, self.x_embed.weight, self.x_embed.bias) + T.linear(
            y_obs.unsqueeze(-1), self.y_embed.weight, self.y_embed.bias
        )
        qry = T.linear(x_qry, self.x_embed.weight, self.x_embed.bias) + self.no_target
        for block in self.blocks:
            obs, qry = block(obs, qry, dense=dense)
        return T.linear(qry, self.head.weight, self.head.bias)
