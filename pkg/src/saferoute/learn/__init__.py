from .cv import CvReport, FoldResult, cross_validate, format_table, scores
from .dataset import Column, Dataset, schema_hash
from .gbdt import GbdtModel, GbdtParams, Importance, feature_importance, predict, train
from .smote import smote

__all__ = ["Column", "CvReport", "Dataset", "FoldResult", "GbdtModel", "GbdtParams", "Importance",
           "cross_validate", "feature_importance", "format_table", "predict", "schema_hash",
           "scores", "smote", "train"]
