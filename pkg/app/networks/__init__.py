from app.networks import autoencoder, cgan, convlstm, detector, siamese
from app.networks.autoencoder import AutoencoderModel
from app.networks.blocks import PatchGanDiscriminator, ResidualBlock, ResidualEncoder, UNetGenerator
from app.networks.cgan import CganModel
from app.networks.convlstm import ConvLstmCellParams, ConvLstmStack, ConvLstmState, conv_lstm_cell_step
from app.networks.detector import DetectorModel
from app.networks.layers import Conv2dLayer, Dense, Module, ModuleList
from app.networks.siamese import SiameseModel

MODEL_KINDS = (
    detector.MODEL_KIND,
    convlstm.MODEL_KIND,
    autoencoder.MODEL_KIND,
    cgan.MODEL_KIND,
    siamese.MODEL_KIND,
)

__all__ = [
    "MODEL_KINDS",
    "AutoencoderModel",
    "CganModel",
    "Conv2dLayer",
    "ConvLstmCellParams",
    "ConvLstmStack",
    "ConvLstmState",
    "Dense",
    "DetectorModel",
    "Module",
    "ModuleList",
    "PatchGanDiscriminator",
    "ResidualBlock",
    "ResidualEncoder",
    "SiameseModel",
    "UNetGenerator",
    "conv_lstm_cell_step",
]
