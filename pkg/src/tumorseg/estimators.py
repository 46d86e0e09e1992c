"""Scikit-learn style estimators wrapping the full pipeline.

Each segmenter takes raw (already bias-corrected) volumes, normalizes them
internally, trains with tumour-centred patches, and predicts post-processed
label maps, so ``est.fit(X, y).predict(X)`` is the whole pipeline. X is a
list of MultiModalVolume, y a list of LabelMap.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import inference
from .objectives import evaluate_case
from .postprocess import PostprocessConfig, postprocess
from .preprocess import zscore_normalize
from .trainer import STAGES, TrainConfig, train_cascaded, train_multitask
from .validation import check_case_lists, check_volume_list, split_cases
from .volumes import LabelMap, MultiModalVolume, ProbabilityMaps, brain_mask


class ZScoreNormalizer(TransformerMixin, BaseEstimator):
    """Stateless per-channel z-score normalization over the brain region."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        single = isinstance(X, MultiModalVolume)
        volumes = check_volume_list(X)
        out = [zscore_normalize(v, brain_mask(v)) for v in volumes]
        return out[0] if single else out


class _SegmenterBase(BaseEstimator):
    def __init__(
        self,
        patch_size=(128, 128, 128),
        depth=5,
        base_filters=16,
        groupnorm_groups=8,
        dropout_rate=0.3,
        initial_lr=5e-4,
        plateau_factor=0.5,
        plateau_patience=10,
        early_stop_patience=50,
        max_epochs=300,
        l2_weight=1e-5,
        augment=True,
        val_fraction=0.1,
        tta=True,
        wt_threshold=0.5,
        tc_threshold=0.5,
        et_threshold=0.4,
        et_fallback_ladder=(0.3, 0.2, 0.1),
        min_component_voxels=10,
        min_et_voxels=50,
        connectivity=26,
        seed=0,
    ):
        self.patch_size = patch_size
        self.depth = depth
        self.base_filters = base_filters
        self.groupnorm_groups = groupnorm_groups
        self.dropout_rate = dropout_rate
        self.initial_lr = initial_lr
        self.plateau_factor = plateau_factor
        self.plateau_patience = plateau_patience
        self.early_stop_patience = early_stop_patience
        self.max_epochs = max_epochs
        self.l2_weight = l2_weight
        self.augment = augment
        self.val_fraction = val_fraction
        self.tta = tta
        self.wt_threshold = wt_threshold
        self.tc_threshold = tc_threshold
        self.et_threshold = et_threshold
        self.et_fallback_ladder = et_fallback_ladder
        self.min_component_voxels = min_component_voxels
        self.min_et_voxels = min_et_voxels
        self.connectivity = connectivity
        self.seed = seed

    # config assembly -----------------------------------------------------
    def _network_config(self, out_channels):
        from .network import NetworkConfig

        return NetworkConfig(
            out_channels=out_channels,
            patch_size=tuple(self.patch_size),
            depth=self.depth,
            base_filters=self.base_filters,
            groupnorm_groups=self.groupnorm_groups,
            dropout_rate=self.dropout_rate,
            weight_decay=self.l2_weight,
        )

    def _train_config(self):
        return TrainConfig(
            initial_lr=self.initial_lr,
            plateau_factor=self.plateau_factor,
            plateau_patience=self.plateau_patience,
            early_stop_patience=self.early_stop_patience,
            max_epochs=self.max_epochs,
            l2_weight=self.l2_weight,
            augment=self.augment,
            seed=self.seed,
        )

    def _policy(self):
        return inference.ThresholdPolicy(
            wt_threshold=self.wt_threshold,
            tc_threshold=self.tc_threshold,
            et_threshold=self.et_threshold,
            et_fallback_ladder=tuple(self.et_fallback_ladder),
        )

    def _postprocess_config(self):
        return PostprocessConfig(
            min_component_voxels=self.min_component_voxels,
            min_et_voxels=self.min_et_voxels,
            connectivity=self.connectivity,
        )

    def _tta_config(self):
        return inference.TTAConfig(enabled=self.tta)

    # shared plumbing ------------------------------------------------------
    def _prepare_cases(self, X, y):
        volumes, labels = check_case_lists(X, y)
        normalized = [zscore_normalize(v, brain_mask(v)) for v in volumes]
        return split_cases(list(zip(normalized, labels)), self.val_fraction, self.seed)

    def _check_fitted(self):
        if not hasattr(self, "fitted_"):
            raise NotFittedError("call fit before predict")

    def _proba_one(self, volume: MultiModalVolume) -> ProbabilityMaps:
        raise NotImplementedError

    def predict_proba(self, X) -> list[ProbabilityMaps]:
        self._check_fitted()
        volumes = check_volume_list(X)
        normalized = [zscore_normalize(v, brain_mask(v)) for v in volumes]
        return [self._proba_one(v) for v in normalized]

    def predict(self, X) -> list[LabelMap]:
        self._check_fitted()
        volumes = check_volume_list(X)
        probas = self.predict_proba(volumes)
        policy = self._policy()
        pp_config = self._postprocess_config()
        out = []
        for volume, probs in zip(volumes, probas):
            masks = inference.threshold_subregions(probs, policy)
            out.append(
                postprocess(masks, pp_config, spacing=volume.spacing,
                            affine=volume.affine)
            )
        return out

    def score(self, X, y) -> float:
        """Mean Dice over cases and subregions, in [0, 1]."""
        volumes, labels = check_case_lists(X, y)
        predictions = self.predict(volumes)
        scores = []
        for pred, truth in zip(predictions, labels):
            m = evaluate_case(pred, truth)
            scores.extend([m.dice_wt, m.dice_tc, m.dice_et])
        return float(np.mean(scores))


class MultitaskSegmenter(_SegmenterBase):
    """One 3-channel network predicting all subregions jointly."""

    def fit(self, X, y):
        train, val = self._prepare_cases(X, y)
        self.model_, self.history_ = train_multitask(
            train, self._network_config(3), self._train_config(),
            val_cases=val or None,
        )
        self.fitted_ = True
        return self

    def _proba_one(self, volume):
        return inference.predict_multitask(
            self.model_, volume, self._tta_config(), self._policy()
        )


class CascadedSegmenter(_SegmenterBase):
    """Three 1-channel stage networks with cascaded region restriction."""

    def fit(self, X, y):
        train, val = self._prepare_cases(X, y)
        self.models_ = {}
        self.histories_ = {}
        for stage in STAGES:
            self.models_[stage], self.histories_[stage] = train_cascaded(
                train, self._network_config(1), self._train_config(), stage,
                val_cases=val or None,
            )
        self.fitted_ = True
        return self

    def _proba_one(self, volume):
        return inference.predict_cascaded(
            self.models_, volume, self._tta_config(), self._policy()
        )


class EnsembleSegmenter(_SegmenterBase):
    """Average of the multi-task and cascaded framework probabilities."""

    def fit(self, X, y):
        params = self.get_params()
        self.multitask_ = MultitaskSegmenter(**params).fit(X, y)
        self.cascaded_ = CascadedSegmenter(**params).fit(X, y)
        self.fitted_ = True
        return self

    def _proba_one(self, volume):
        return inference.ensemble(
            self.multitask_._proba_one(volume), self.cascaded_._proba_one(volume)
        )
