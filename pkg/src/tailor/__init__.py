"""Gamification personalization: conditional inference trees over ranked survey preferences."""

from .cit import CitConfig, CovariateSchema, grow_tree, predict_distribution
from .codegen import emit_conditional_source, emit_rules, evaluate_rules
from .model_io import load, save
from .recommender import (
    Query,
    RatingTable,
    RecommenderModel,
    feature_importance,
    rate,
    recommend_set,
    train,
)
from .survey import ELEMENTS, Lat, consistency_filter, parse_wide_csv, summarize, to_long

__version__ = "0.1.0"
