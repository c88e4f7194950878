"""``dcgnet graph``: dump the concept-graph matrices as edge lists.

Every matrix file holds one ``i j weight`` line per nonzero entry in
row-major order; ``nodes.txt`` maps node ids to ``concept=value`` labels.

From a dataset only the PPMI prior and the structural mask exist. A
checkpoint adds the learned edge scores before sparsification and the
row-stochastic adjacency the model propagates over.
"""

import argparse
import json

import numpy as np

from engine.tensor import no_grad
from models.graph import build_mask, build_ppmi
from models.schema import ConceptDictionary
from services.checkpoint import load_checkpoint
from services.cli.commands.base import BaseCommand
from services.config import ModelConfig, load_run_config
from services.errors import UsageError
from services.io import atomic_directory
from synthdata.records import read_dataset

NODES_NAME = "nodes.txt"


def edge_lines(matrix: np.ndarray) -> str:
    rows, cols = np.nonzero(matrix)
    return "".join(f"{i} {j} {float(matrix[i, j])!r}\n" for i, j in zip(rows, cols, strict=True))


def node_lines(dictionary: ConceptDictionary) -> str:
    return "".join(
        f"{node} {dictionary.node_label(node)}\n" for node in range(dictionary.num_nodes)
    )


def parse_edges(text: str) -> list[tuple[int, int, float]]:
    """Inverse of ``edge_lines``."""
    edges = []
    for line in text.splitlines():
        i, j, weight = line.split()
        edges.append((int(i), int(j), float(weight)))
    return edges


class GraphCommand(BaseCommand):
    name = "graph"
    help = "Dump the PPMI prior, mask and (from a checkpoint) the learned adjacency"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", help="Dataset directory (prior from its training split)")
        parser.add_argument("--checkpoint", help="Checkpoint file (learned adjacency)")
        parser.add_argument("--config", help="Run config for the prior's smoothing (dataset only)")
        parser.add_argument("--out", required=True, help="Directory to write the dumps into")

    def execute(self, args: argparse.Namespace) -> int:
        if not args.data and not args.checkpoint:
            raise UsageError("graph needs --data or --checkpoint")
        matrices: dict[str, np.ndarray] = {}
        if args.checkpoint:
            expected = read_dataset(args.data).dictionary if args.data else None
            model = load_checkpoint(args.checkpoint, expected_dictionary=expected).model
            dictionary = model.dictionary
            matrices["prior"] = model.prior
            if model.graph is not None:
                with no_grad():
                    pipeline = model.graph.adjacency()
                matrices["mask"] = model.graph.mask
                matrices["scores"] = pipeline.unnorm.data
                matrices["adjacency"] = pipeline.stochastic.data
            else:
                matrices["mask"] = build_mask(dictionary)
        else:
            dataset = read_dataset(args.data)
            config = load_run_config(args.config).model if args.config else ModelConfig()
            dictionary = dataset.dictionary
            prior = build_ppmi(dataset.train.concepts, dictionary, config.ppmi_smoothing)
            matrices["prior"] = prior.matrix
            matrices["mask"] = build_mask(dictionary)

        with atomic_directory(args.out) as staging:
            (staging / NODES_NAME).write_text(node_lines(dictionary), encoding="utf-8")
            for name, matrix in matrices.items():
                (staging / f"{name}.txt").write_text(edge_lines(matrix), encoding="utf-8")
        summary = {
            "path": str(args.out),
            "nodes": dictionary.num_nodes,
            "edges": {name: int(np.count_nonzero(matrix)) for name, matrix in matrices.items()},
        }
        print(json.dumps(summary, sort_keys=True))
        return 0
