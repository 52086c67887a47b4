"""Desk-scale AutoML for tables mixing numeric, categorical and text columns."""
from .frame import DataTable, FeatureSchema, SplitSpec, fit_transform, infer_schema, read_csv, split_train_val

__version__ = "0.1.0"

__all__ = ["DataTable", "FeatureSchema", "SplitSpec", "fit_transform", "infer_schema", "read_csv",
           "split_train_val", "__version__"]
