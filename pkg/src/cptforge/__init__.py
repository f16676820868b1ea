"""Data curation for continual pre-training.

Subsystems: corpus ingestion and statistics, bilingual topic taxonomy and
classifiers, validation-PPL-driven mixture adjustment, difficulty curricula,
scientific/code QA synthesis, corruption ablations, and deterministic
two-stage shard emission.
"""

from .corpus import CorpusStats, Document, Language, Source
from .curriculum import CurriculumPlan
from .errors import CptForgeError, DataError, RemoteError, UsageError
from .mixture import MixtureState, PplSnapshot
from .synthesis import QAPair
from .topic import TopicLabel, TopicTaxonomy

__version__ = "0.1.0"

__all__ = [
    "CorpusStats",
    "CptForgeError",
    "CurriculumPlan",
    "DataError",
    "Document",
    "Language",
    "MixtureState",
    "PplSnapshot",
    "QAPair",
    "RemoteError",
    "Source",
    "TopicLabel",
    "TopicTaxonomy",
    "UsageError",
    "__version__",
]
