"""Stage plans: token budgets, language ratios, and per-pool source ratios.

The two-stage defaults: stage 1 (bilingual adaptation) takes 92.5% of the
total budget at a 2:8 Chinese:English ratio with topic mixture and PPL
curriculum on; stage 2 (synthetic enhancement) takes 7.5% at 1:7:2
Chinese:English:synthetic with both off (plain random sampling).

Default source ratios are derived so the default run reconciles per source
with the reference corpus composition: the Chinese run share (0.925*0.2 +
0.075*0.1 = 0.1925 of all tokens) is drawn proportionally from the four
sources available in both languages; the English pool keeps English-only
sources at full volume plus the remainder of the shared sources; the
synthetic share 0.075*0.2 = 0.015 equals the synthetic row exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping

from ..corpus import Source
from ..errors import DataError

POOL_ZH = "zh"
POOL_EN = "en"
POOL_SYN = "syn"

RATIO_SUM_TOL = 1e-9
DEFAULT_ROUND_TOKENS = 10_000  # desk default; production runs override per config

# Reference corpus composition, billions of tokens (EN+ZH combined).
TABLE1_VOLUMES: dict[Source, float] = {
    Source.WEB_PAGES: 45.18,
    Source.ENCYCLOPEDIA: 4.92,
    Source.BOOKS: 15.74,
    Source.QA_FORUMS: 4.92,
    Source.ACADEMIC_PAPERS: 7.93,
    Source.MATH_CORPORA: 7.93,
    Source.CODE: 11.88,
    Source.SYNTHETIC: 1.50,
}
SHARED_SOURCES = (Source.WEB_PAGES, Source.ENCYCLOPEDIA, Source.BOOKS, Source.QA_FORUMS)
EN_ONLY_SOURCES = (Source.ACADEMIC_PAPERS, Source.MATH_CORPORA, Source.CODE)

STAGE1_BUDGET_SHARE = 0.925
STAGE2_BUDGET_SHARE = 0.075
STAGE1_LANGUAGE_RATIOS = {POOL_ZH: 0.2, POOL_EN: 0.8}
STAGE2_LANGUAGE_RATIOS = {POOL_ZH: 0.1, POOL_EN: 0.7, POOL_SYN: 0.2}


class Stage(str, enum.Enum):
    BILINGUAL_ADAPTATION = "bilingual_adaptation"
    SYNTHETIC_ENHANCEMENT = "synthetic_enhancement"

    @classmethod
    def parse(cls, value: str) -> "Stage":
        aliases = {"1": cls.BILINGUAL_ADAPTATION, "stage1": cls.BILINGUAL_ADAPTATION,
                   "2": cls.SYNTHETIC_ENHANCEMENT, "stage2": cls.SYNTHETIC_ENHANCEMENT}
        key = value.strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise DataError(f"unknown stage {value!r}")


def default_source_ratios() -> dict[str, dict[str, float]]:
    """Per-pool source ratios that reconcile the default run with the
    reference composition (see module docstring for the derivation)."""
    total = sum(TABLE1_VOLUMES.values())
    shared_volume = sum(TABLE1_VOLUMES[s] for s in SHARED_SOURCES)
    zh_run_frac = (STAGE1_BUDGET_SHARE * STAGE1_LANGUAGE_RATIOS[POOL_ZH]
                   + STAGE2_BUDGET_SHARE * STAGE2_LANGUAGE_RATIOS[POOL_ZH])
    zh_take = zh_run_frac * total / shared_volume  # fraction of each shared source drawn via ZH

    zh_ratios = {s.value: TABLE1_VOLUMES[s] / shared_volume for s in SHARED_SOURCES}
    en_volumes = {s.value: TABLE1_VOLUMES[s] * (1.0 - zh_take) for s in SHARED_SOURCES}
    en_volumes.update({s.value: TABLE1_VOLUMES[s] for s in EN_ONLY_SOURCES})
    en_total = sum(en_volumes.values())
    en_ratios = {name: vol / en_total for name, vol in en_volumes.items()}
    return {
        POOL_ZH: zh_ratios,
        POOL_EN: en_ratios,
        POOL_SYN: {Source.SYNTHETIC.value: 1.0},
    }


def _check_ratios(ratios: Mapping[str, float], what: str):
    if not ratios:
        raise DataError(f"{what} ratios are empty")
    total = sum(ratios.values())
    if any(v < 0 for v in ratios.values()):
        raise DataError(f"{what} ratios must be >= 0")
    if abs(total - 1.0) > RATIO_SUM_TOL:
        raise DataError(f"{what} ratios sum to {total!r}, expected 1 within {RATIO_SUM_TOL}")


@dataclass(frozen=True)
class StagePlan:
    stage: Stage
    token_budget: int
    round_tokens: int
    language_ratios: dict[str, float]
    source_ratios: dict[str, dict[str, float]]
    use_topic_mixture: bool
    use_ppl_curriculum: bool
    seed: int = 0

    def __post_init__(self):
        if self.token_budget <= 0:
            raise DataError("token_budget must be positive")
        if self.round_tokens <= 0:
            raise DataError("round_tokens must be positive")
        _check_ratios(self.language_ratios, "language")
        for pool, ratios in self.source_ratios.items():
            _check_ratios(ratios, f"{pool} source")
        for pool in self.language_ratios:
            if self.language_ratios[pool] > 0 and pool not in self.source_ratios:
                raise DataError(f"no source ratios for pool {pool!r}")

    @property
    def rounds(self) -> int:
        return math.ceil(self.token_budget / self.round_tokens)

    def to_json(self) -> dict:
        return {
            "stage": self.stage.value,
            "token_budget": self.token_budget,
            "round_tokens": self.round_tokens,
            "language_ratios": dict(self.language_ratios),
            "source_ratios": {p: dict(r) for p, r in self.source_ratios.items()},
            "use_topic_mixture": self.use_topic_mixture,
            "use_ppl_curriculum": self.use_ppl_curriculum,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StagePlan":
        return cls(
            stage=Stage.parse(obj["stage"]),
            token_budget=int(obj["token_budget"]),
            round_tokens=int(obj["round_tokens"]),
            language_ratios=dict(obj["language_ratios"]),
            source_ratios={p: dict(r) for p, r in obj["source_ratios"].items()},
            use_topic_mixture=bool(obj["use_topic_mixture"]),
            use_ppl_curriculum=bool(obj["use_ppl_curriculum"]),
            seed=int(obj.get("seed", 0)),
        )


def build_stage_plan(
    stage: Stage,
    total_budget: int,
    overrides: Mapping | None = None,
) -> StagePlan:
    """Default plan for one stage of a run with the given total budget.

    Overridable keys: budget, budget_share, round_tokens, language_ratios,
    source_ratios, use_topic_mixture, use_ppl_curriculum, seed. Ratio
    overrides must still sum to 1.
    """
    if total_budget <= 0:
        raise DataError("total_budget must be positive")
    overrides = dict(overrides or {})
    if stage is Stage.BILINGUAL_ADAPTATION:
        share = float(overrides.get("budget_share", STAGE1_BUDGET_SHARE))
        language_ratios = dict(STAGE1_LANGUAGE_RATIOS)
        use_topic_mixture, use_ppl_curriculum = True, True
    else:
        share = float(overrides.get("budget_share", STAGE2_BUDGET_SHARE))
        language_ratios = dict(STAGE2_LANGUAGE_RATIOS)
        use_topic_mixture, use_ppl_curriculum = False, False

    budget = int(overrides.get("budget", round(total_budget * share)))
    language_ratios = dict(overrides.get("language_ratios", language_ratios))
    source_ratios = default_source_ratios()
    for pool, ratios in dict(overrides.get("source_ratios", {})).items():
        source_ratios[pool] = dict(ratios)
    source_ratios = {p: r for p, r in source_ratios.items() if p in language_ratios}
    return StagePlan(
        stage=stage,
        token_budget=budget,
        round_tokens=int(overrides.get("round_tokens", DEFAULT_ROUND_TOKENS)),
        language_ratios=language_ratios,
        source_ratios=source_ratios,
        use_topic_mixture=bool(overrides.get("use_topic_mixture", use_topic_mixture)),
        use_ppl_curriculum=bool(overrides.get("use_ppl_curriculum", use_ppl_curriculum)),
        seed=int(overrides.get("seed", 0)),
    )


def apportion(total: int, weights: Mapping) -> dict:
    """Largest-remainder apportionment of an integer total over weights.

    Weights must sum to 1; the result sums to exactly ``total``. Ties break
    by key order, so the split is deterministic.
    """
    if total < 0:
        raise DataError("total must be >= 0")
    keys = sorted(weights)
    _check_ratios({str(k): weights[k] for k in keys}, "apportionment")
    quotas = {k: total * weights[k] for k in keys}
    floors = {k: math.floor(quotas[k]) for k in keys}
    remainder = total - sum(floors.values())
    by_fraction = sorted(keys, key=lambda k: (-(quotas[k] - floors[k]), k))
    for k in by_fraction[:remainder]:
        floors[k] += 1
    return floors
