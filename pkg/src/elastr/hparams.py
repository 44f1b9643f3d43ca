# The MIT License (MIT)
# © 2025 elastr contributors

# Permission is hereby granted, free of charge, to any person obtaining a copy of this software and associated
# documentation files (the "Software"), to deal in the Software without restriction, including without limitation
# the rights to use, copy, modify, merge, publish, distribute, sublicense, and/or sell copies of the Software,
# and to permit persons to whom the Software is furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in all copies or substantial portions of
# the Software.

# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO
# THE WARRANTIES OF MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL
# THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION
# OF CONTRACT, TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER
# DEALINGS IN THE SOFTWARE.

# Global imports
import json
from pathlib import Path
from types import SimpleNamespace

# Local imports
from .logging import logger
from .schemas import ModelConfig

DEFAULT_HPARAMS = {
    # Run configuration
    "project": "elastr",
    "seed": 42,
    # Model architecture
    "num_hidden_layers": 4,
    "hidden_size": 64,
    "num_attention_heads": 4,
    "intermediate_size": 128,
    "vocab_size": 32,
    "max_position_embeddings": 16,
    "num_classes": 2,
    "hidden_dropout_prob": 0.1,
    "attention_dropout_prob": 0.1,
    "score_scale": "head",
    # Sub-network grid
    "width_list": [1.0, 0.75, 0.5, 0.25],
    "depth_list": [1.0, 0.75, 0.5],
    # Optimization parameters
    "batch_size": 32,
    "learning_rate": 2e-4,
    "max_grad_norm": 1.0,
    "teacher_epochs": 10,
    "epochs": 3,
    "lambda1_w": 1.0,
    "lambda2_w": 0.1,
    "lambda1_wd": 1.0,
    "lambda2_wd": 1.0,
    "us_random_widths": 2,
    # Synthetic data
    "task": "contains_bigram",
    "sequence_length": 16,
    "task_size": 2000,
}

LOCAL_RUN_HPARAMS = "hparams-local-run.json"

MODEL_KEYS = (
    "num_hidden_layers",
    "hidden_size",
    "num_attention_heads",
    "intermediate_size",
    "vocab_size",
    "max_position_embeddings",
    "num_classes",
    "hidden_dropout_prob",
    "attention_dropout_prob",
    "score_scale",
    "width_list",
    "depth_list",
)


def create_namespace(hparams: dict) -> SimpleNamespace:
    """
    Create a SimpleNamespace from the hyperparameters and add model configuration.

    Args:
        hparams (dict): Hyperparameters dictionary.

    Returns:
        SimpleNamespace: Namespace containing hyperparameters and model configuration.
    """
    # Merge with defaults
    full_hparams = DEFAULT_HPARAMS.copy()
    full_hparams.update(hparams)

    hparams_ns = SimpleNamespace(**full_hparams)

    try:
        hparams_ns.model_config = ModelConfig(
            **{key: full_hparams[key] for key in MODEL_KEYS}
        )
    except ValueError as e:
        logger.error(f"Failed to create model config: {e}")
        raise

    return hparams_ns


def load_hparams(
    hparams_file: str = "hparams.json", use_local_run_hparams: bool = False
) -> SimpleNamespace:
    """
    Load hyperparameters from a JSON file.

    Args:
        hparams_file (str): Path to the hyperparameters JSON file.
        use_local_run_hparams (bool): Overlay hparams-local-run.json, a
            laptop-sized config for smoke runs.

    Returns:
        SimpleNamespace: A namespace containing the hyperparameters and model configuration.

    Example:
        hparams = load_hparams()
        print(hparams.hidden_size)
        print(hparams.model_config)
    """
    try:
        with open(hparams_file, "r") as f:
            hparams = json.load(f)
        logger.info(f"Loaded hparams from {hparams_file}")
        if use_local_run_hparams:
            with open(Path(hparams_file).with_name(LOCAL_RUN_HPARAMS), "r") as f:
                hparams_local_run = json.load(f)
            hparams.update(hparams_local_run)
            logger.info(
                f"Using these special hparams for a local run: {hparams_local_run}"
            )
        return create_namespace(hparams)
    except FileNotFoundError:
        logger.warning(f"No {hparams_file} found, using default hyperparameters")
        return create_namespace({})
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON in {hparams_file}: {e}")
        raise
