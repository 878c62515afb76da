import logging
from typing import List, Optional

import torch
import torch.nn as nn

from .gradcheck import max_relative_error

logger = logging.getLogger("Rgcn")

ACTIVATIONS = {
    "relu": torch.relu,
    "identity": lambda h: h,
    "tanh": torch.tanh,
}

BASIS_THRESHOLD = 64
DEFAULT_BASES = 16


class RgcnLayer(nn.Module):
    """Relation-typed graph convolution.

    h_i' = act( sum_r sum_{j in N_i^r} W_r h_j / |N_i^r| + W_0 h_i )

    With num_bases set, every W_r is a coefficient combination of shared bases.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        num_relations: int,
        num_bases: Optional[int] = None,
        activation: str = "relu",
    ):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError("Unknown activation " + activation)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.num_relations = num_relations
        self.num_bases = num_bases
        self.activation = activation

        if num_bases:
            self.bases = nn.Parameter(torch.empty(num_bases, out_dim, in_dim))
            self.coefficients = nn.Parameter(torch.empty(num_relations, num_bases))
        else:
            self.relation_weight = nn.Parameter(torch.empty(num_relations, out_dim, in_dim))
        self.root_weight = nn.Parameter(torch.empty(out_dim, in_dim))
        self.reset_parameters()

    def reset_parameters(self):
        if self.num_bases:
            nn.init.xavier_uniform_(self.bases)
            nn.init.xavier_uniform_(self.coefficients)
        else:
            nn.init.xavier_uniform_(self.relation_weight)
        nn.init.xavier_uniform_(self.root_weight)

    def relation_weights(self) -> torch.Tensor:
        """All W_r stacked as (num_relations, out_dim, in_dim)"""
        if self.num_bases:
            return torch.einsum("rb,boi->roi", self.coefficients, self.bases)
        return self.relation_weight

    def forward(
        self,
        h: torch.Tensor,
        src: torch.Tensor,
        dst: torch.Tensor,
        etype: torch.Tensor,
        inflow_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        if h.dim() != 2 or h.shape[1] != self.in_dim:
            raise ValueError(
                "Expected node features of width "
                + str(self.in_dim)
                + ", got shape "
                + str(tuple(h.shape))
            )
        if etype.numel() and (int(etype.max()) >= self.num_relations or int(etype.min()) < 0):
            raise ValueError(
                "Edge relation "
                + str(int(etype.max()))
                + " has no weight, layer knows "
                + str(self.num_relations)
            )

        if inflow_mask is not None and src.numel():
            # Masked nodes keep only their self term
            keep = ~inflow_mask[dst]
            src, dst, etype = src[keep], dst[keep], etype[keep]

        out = h @ self.root_weight.t()
        if src.numel() == 0:
            return ACTIVATIONS[self.activation](out)

        # c_{i,r} = number of neighbours of i under relation r
        _, inverse, counts = torch.unique(
            dst * self.num_relations + etype, return_inverse=True, return_counts=True
        )
        norm = (1.0 / counts.to(h.dtype))[inverse].unsqueeze(1)

        h_src = h[src]
        if self.num_bases:
            projected = torch.einsum("ei,boi->ebo", h_src, self.bases)
            messages = torch.einsum("eb,ebo->eo", self.coefficients[etype], projected)
        else:
            messages = torch.zeros(src.shape[0], self.out_dim, dtype=h.dtype, device=h.device)
            for relation in torch.unique(etype).tolist():
                selected = etype == relation
                messages[selected] = h_src[selected] @ self.relation_weight[relation].t()

        aggregated = torch.zeros(h.shape[0], self.out_dim, dtype=h.dtype, device=h.device)
        aggregated = aggregated.index_add(0, dst, messages * norm)
        return ACTIVATIONS[self.activation](aggregated + out)


def bases_for(num_relations: int, threshold: int = BASIS_THRESHOLD, num_bases: int = DEFAULT_BASES):
    if num_relations > threshold:
        return min(num_bases, num_relations)
    return None


class RgcnEncoder(nn.Module):
    """Per-kind input projection followed by stacked RGCN layers.

    Hidden layers use ReLU, the last layer is linear.
    """

    def __init__(
        self,
        d_in: int,
        hidden_dim: int,
        num_relations: int,
        num_layers: int = 3,
        basis_threshold: int = BASIS_THRESHOLD,
        num_bases: int = DEFAULT_BASES,
        num_kinds: int = 3,
    ):
        super().__init__()
        self.d_in = d_in
        self.hidden_dim = hidden_dim
        self.num_relations = num_relations
        self.input_projections = nn.ModuleList(
            [nn.Linear(d_in, hidden_dim, bias=False) for _ in range(num_kinds)]
        )
        bases = bases_for(num_relations, basis_threshold, num_bases)
        if bases:
            logger.info(
                "Using "
                + str(bases)
                + " basis matrices for "
                + str(num_relations)
                + " relations"
            )
        self.layers = nn.ModuleList(
            [
                RgcnLayer(
                    hidden_dim,
                    hidden_dim,
                    num_relations,
                    num_bases=bases,
                    activation="relu" if i < num_layers - 1 else "identity",
                )
                for i in range(num_layers)
            ]
        )

    def project_inputs(self, x: torch.Tensor, node_kind: torch.Tensor) -> torch.Tensor:
        h = torch.zeros(x.shape[0], self.hidden_dim, dtype=x.dtype, device=x.device)
        for kind, projection in enumerate(self.input_projections):
            selected = torch.nonzero(node_kind == kind, as_tuple=True)[0]
            if selected.numel():
                h = h.index_copy(0, selected, projection(x[selected]))
        return h

    def forward(self, batch, inflow_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.project_inputs(batch.x, batch.node_kind)
        for layer in self.layers:
            h = layer(h, batch.src, batch.dst, batch.etype, inflow_mask)
        return h

    def final_relation_weights(self) -> torch.Tensor:
        return self.layers[-1].relation_weights()


def gradient_check(
    layer: RgcnLayer,
    h: torch.Tensor,
    src: torch.Tensor,
    dst: torch.Tensor,
    etype: torch.Tensor,
    epsilon: float = 1e-5,
    loss_fn=None,
    inflow_mask: Optional[torch.Tensor] = None,
) -> float:
    """Max relative error between autograd and central differences for the layer parameters"""
    layer = layer.double()
    h = h.double()
    if loss_fn is None:
        # Fixed random projection keeps the loss sensitive to every output entry
        generator = torch.Generator().manual_seed(0)
        direction = torch.randn(h.shape[0], layer.out_dim, generator=generator, dtype=torch.float64)

        def loss_fn(out):
            return (out * direction).sum() + 0.5 * (out**2).sum()

    parameters: List[torch.Tensor] = list(layer.parameters())
    return max_relative_error(
        lambda: loss_fn(layer(h, src, dst, etype, inflow_mask)), parameters, epsilon
    )
