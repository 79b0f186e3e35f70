"""Generation network: text encoder, three-stage attention generator with tr-ACM blocks, losses, training."""

from .encoders import ImageEncoder, TextEmbedding, TextEncoder, encode_text
from .losses import (RandomConvExtractor, correlation_score, damsm_from_features, damsm_loss,
                     gn_discriminator_loss, gn_generator_loss, perceptual_loss, reg_loss)
from .model import Gn, GnGenerator, StageDiscriminator, StageOutputs, gn_forward
from .modules import TrAcm, WordAttention, tr_acm, word_attention
from .train import train_gn

__all__ = [
    "Gn", "GnGenerator", "ImageEncoder", "RandomConvExtractor", "StageDiscriminator", "StageOutputs",
    "TextEmbedding", "TextEncoder", "TrAcm", "WordAttention", "correlation_score",
    "damsm_from_features", "damsm_loss", "encode_text", "gn_discriminator_loss", "gn_forward",
    "gn_generator_loss", "perceptual_loss", "reg_loss", "tr_acm", "train_gn", "word_attention",
]
