"""Settings of the comparison rankers."""

import logging
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from permurank.baselines.plackett_luce import PlackettLuceSampler

log = logging.getLogger(__name__)

GainSource = Literal["relevance", "clicks"]


class BaselineConfig(BaseModel):
    """Knobs of the Naive, PG-Rank* and URCC* trainers."""

    model_config = ConfigDict(extra="forbid")

    naive_tau: float = Field(default=0.1, gt=0.0)
    """SoftSort temperature of the relaxed NDCG loss."""

    naive_gain: GainSource = "relevance"
    """Per-item target of the Naive ranker: sigmoid(R) or the logged clicks."""

    pg_temperature: float = Field(default=0.1, gt=0.0)
    """Plackett-Luce temperature of PG-Rank*."""

    pg_samples: int = Field(default=10, ge=1)
    """K, sampled rankings per group and step."""

    pg_greedy: bool = False
    """Use the deterministic argsort instead of sampling."""

    urcc_tau: float = Field(default=0.1, gt=0.0)
    """Temperature of the pairwise score loss in URCC*."""

    urcc_from_scratch: bool = False
    """Start URCC* from fresh weights instead of a trained Naive ranker."""

    def sampler(self) -> PlackettLuceSampler:
        """PlackettLuceSampler built from the PG-Rank* settings."""
        return PlackettLuceSampler(temperature=self.pg_temperature, samples=self.pg_samples, greedy=self.pg_greedy)
