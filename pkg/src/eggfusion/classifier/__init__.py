from .extractors import FeatureExtractor, create_extractor, crop_features, extract_features
from .svm import SvmModel, classify, train_svm

__all__ = ["FeatureExtractor", "SvmModel", "classify", "create_extractor", "crop_features", "extract_features", "train_svm"]
