"""POPK: popular-article substitution in negative sampling for news recommendation."""

from .corpus import BucketSpec, Catalog, Impression, NewsArticle, bucket_of, parse_behaviors, parse_news
from .metrics import EvalReport, evaluate
from .model import ClickScorer, ModelParams
from .popindex import PopularityIndex, PopularityLogic, PopularityMetric
from .sampler import PopkSampler, SamplerConfig, TrainingSample, make_samples
from .synth import SynthConfig, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "BucketSpec", "Catalog", "ClickScorer", "EvalReport", "Impression", "ModelParams",
    "NewsArticle", "PopkSampler", "PopularityIndex", "PopularityLogic", "PopularityMetric",
    "SamplerConfig", "SynthConfig", "TrainingSample", "bucket_of", "evaluate",
    "generate_corpus", "make_samples", "parse_behaviors", "parse_news",
]
