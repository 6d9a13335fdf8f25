from owl.predictors.ann import AnnPredictor
from owl.predictors.base import NoveltyThreshold, Predictor, PredictorConfig, calibrate_threshold
from owl.predictors.gmm_finch import GmmFinchPredictor

KINDS = {"ann": AnnPredictor, "gmm_finch": GmmFinchPredictor}


def make_predictor(config: PredictorConfig) -> Predictor:
    return KINDS[config.kind](config)


def predictor_from_checkpoint(header: dict, blocks: dict) -> Predictor:
    try:
        cls = KINDS[header["kind"]]
    except KeyError:
        raise ValueError(f"unknown predictor kind in checkpoint: {header.get('kind')!r}") from None
    return cls.from_checkpoint(header, blocks)
