from .config import FeConfig, MlpSpec, ModelConfig, SaConfig, full_size, preset, tiny
from .gradcheck import model_grad_check
from .layers import CloudBatch, ForwardContext, flow_embedding, mini_pointnet, set_abstraction
from .model import forward_batch, model_forward
from .params import ModelParams, count_parameters, layer_plan

__all__ = [
    "CloudBatch",
    "FeConfig",
    "ForwardContext",
    "MlpSpec",
    "ModelConfig",
    "ModelParams",
    "SaConfig",
    "count_parameters",
    "flow_embedding",
    "forward_batch",
    "full_size",
    "layer_plan",
    "mini_pointnet",
    "model_grad_check",
    "model_forward",
    "preset",
    "set_abstraction",
    "tiny",
]
