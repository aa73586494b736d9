"""
Parameter and FLOP accounting for the keyword-spotting networks.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from components.layers import Linear, Module
from components.models import KwsModel, build_model
from utils.config_loader import get_architecture

logger = logging.getLogger("model_counter")

DEFAULT_FRAMES = 98


@dataclass
class CountReport:
    model: str
    frames: int
    inference_params: int
    inference_flops: int
    training_params: int
    training_flops: int
    breakdown: Dict[str, int]


class ModelCounter:
    """Counts learnable scalars and FLOPs (one multiply-accumulate = 2 FLOPs)."""

    @staticmethod
    def count_params(model: Module, inference_only: bool = False) -> int:
        """
        Count learnable scalars.

        Args:
            model: Any module; for a KwsModel the dynamic embedding branch is
                left out when `inference_only` is set
            inference_only: Count the inference graph only

        Returns:
            Number of parameters
        """
        if isinstance(model, KwsModel) and inference_only and model.embedding is not None:
            return model.num_params() - model.embedding.num_params()
        return model.num_params()

    @staticmethod
    def count_flops(model: Module, frames: int = DEFAULT_FRAMES, inference_only: bool = True) -> int:
        if isinstance(model, Linear):
            return model.flops()
        if isinstance(model, KwsModel):
            total = 0
            if model.filter is not None:
                total += model.filter.flops(frames)[0]
            total += model.tenet.flops(frames)[0]
            if not inference_only and model.embedding is not None:
                total += model.embedding.flops(frames)[0]
            return total
        return model.flops(frames)[0]

    @staticmethod
    def breakdown(model: KwsModel) -> Dict[str, int]:
        """Parameters per network (first component of the parameter name)."""
        per_network: Dict[str, int] = {}
        for name, tensor in model.named_parameters():
            network = name.split(".", 1)[0]
            per_network[network] = per_network.get(network, 0) + tensor.size
        return per_network

    @staticmethod
    def report(model_name: str, frames: int = DEFAULT_FRAMES, num_classes: int = 12) -> CountReport:
        architecture = get_architecture(model_name)
        model = build_model(architecture, num_classes, np.random.default_rng(0), name=model_name)
        return CountReport(
            model=model_name,
            frames=frames,
            inference_params=ModelCounter.count_params(model, inference_only=True),
            inference_flops=ModelCounter.count_flops(model, frames, inference_only=True),
            training_params=ModelCounter.count_params(model),
            training_flops=ModelCounter.count_flops(model, frames, inference_only=False),
            breakdown=ModelCounter.breakdown(model),
        )

    @staticmethod
    def format_report(report: CountReport) -> str:
        lines: List[str] = [
            "=" * 60,
            f"MODEL: {report.model} (T = {report.frames} frames)",
            "=" * 60,
            f"Inference parameters: {report.inference_params:,}",
            f"Inference FLOPs:      {report.inference_flops:,} ({report.inference_flops / 1e6:.2f}M)",
            f"Training parameters:  {report.training_params:,}",
            f"Training FLOPs:       {report.training_flops:,} ({report.training_flops / 1e6:.2f}M)",
            "-" * 60,
        ]
        for network, count in report.breakdown.items():
            lines.append(f"  {network:<12} {count:>10,}")
        return "\n".join(lines)


def count_params(model: Module, inference_only: bool = False) -> int:
    return ModelCounter.count_params(model, inference_only)


def count_flops(model: Module, frames: int = DEFAULT_FRAMES, inference_only: bool = True) -> int:
    return ModelCounter.count_flops(model, frames, inference_only)
