"""Binary local descriptors, BossaNova encoding and video-level descriptors
(BNVD / BoW-VD) for kernel-SVM video classification."""

from .classifier import ExpKernelSVC, KernelConfig, SvmModel, gamma_auto, svm_decision, svm_predict, svm_train
from .codebook import Codebook, HammingKMedians, assign_knn, hamming, hamming_matrix, kmedians
from .config import RunConfig, load_config
from .descriptors import BriefExtractor, DescriptorConfig, DescriptorSet, extract_brief, extract_frame, gen_pattern
from .encoding import BossaNovaEncoder, BossaParams, BoWEncoder, MidLevelVector, encode, encode_bossanova, encode_bow, normalize
from .evaluation import auc, roc_curve, run_cv, sweep
from .synth import CorpusSpec, generate
from .imaging import GrayImage, box_smooth, dense_grid, load_image, write_image
from .video import VideoAggregator, aggregate, global_pool, majority_vote, read_manifest

__version__ = "0.1.0"

__all__ = [
    "BoWEncoder", "BossaNovaEncoder", "BossaParams", "BriefExtractor", "Codebook", "CorpusSpec", "DescriptorConfig",
    "DescriptorSet", "ExpKernelSVC", "GrayImage", "HammingKMedians", "KernelConfig", "MidLevelVector",
    "RunConfig", "SvmModel", "VideoAggregator", "aggregate", "assign_knn", "auc", "box_smooth",
    "dense_grid", "encode", "encode_bossanova", "encode_bow", "extract_brief", "extract_frame", "gamma_auto",
    "gen_pattern", "generate", "global_pool", "hamming", "hamming_matrix", "kmedians", "load_config", "load_image",
    "majority_vote", "normalize", "read_manifest", "roc_curve", "run_cv", "svm_decision", "svm_predict", "svm_train",
    "sweep", "write_image",
]
