"""Shared multi-task network: a DAG of layer instances with per-task views.

Every task owns an ordered chain of trunk nodes (one per canonical
position) plus a head node. Binding makes a new task share another task's
trunk; expansion clones individual positions for the new task while the
rest of the network stays untouched.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import BlockSpec, ParamGroup


class JointNetError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    name: str
    input_shape: tuple  # per-sample shape, e.g. (196,) or (1, 14, 14)
    blocks: tuple  # BlockSpec per trunk position
    head_in: int
    classes: int

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def head_kind(self) -> nn.SoftmaxCrossEntropyHead:
        return nn.SoftmaxCrossEntropyHead(self.head_in, self.classes)

    def column_names(self):
        return [b.name for b in self.blocks]


def mlp_arch(input_dim: int = 196, hidden=(64, 64), classes: int = 10) -> Architecture:
    blocks = []
    prev = input_dim
    for i, h in enumerate(hidden):
        blocks.append(BlockSpec(f"linear{i + 1}", (nn.Dense(prev, h), nn.ReLU())))
        prev = h
    return Architecture("mlp", (input_dim,), tuple(blocks), head_in=prev, classes=classes)


def convnet_arch(in_ch: int = 1, side: int = 14, classes: int = 2) -> Architecture:
    """Three conv blocks with pooling/ReLU followed by two dense blocks."""
    if side != 14:
        raise JointNetError("convnet preset is sized for 14x14 inputs")
    blocks = (
        BlockSpec("conv1", (nn.Conv2D(in_ch, 8, 3), nn.ReLU(), nn.MaxPool2D(2))),  # 14->12->6
        BlockSpec("conv2", (nn.Conv2D(8, 16, 3), nn.ReLU(), nn.MaxPool2D(2))),  # 6->4->2
        BlockSpec("conv3", (nn.Conv2D(16, 16, 2), nn.ReLU())),  # 2->1
        BlockSpec("linear1", (nn.Flatten(), nn.Dense(16, 32), nn.ReLU())),
        BlockSpec("linear2", (nn.Dense(32, 32), nn.ReLU())),
    )
    return Architecture("convnet", (in_ch, side, side), blocks, head_in=32, classes=classes)


def synth_arch(input_dim: int, hidden=(16, 16), classes: int = 4) -> Architecture:
    blocks = []
    prev = input_dim
    for i, h in enumerate(hidden):
        blocks.append(BlockSpec(f"linear{i + 1}", (nn.Dense(prev, h), nn.ReLU())))
        prev = h
    return Architecture("synth", (input_dim,), tuple(blocks), head_in=prev, classes=classes)


ARCH_PRESETS = {
    "mlp": mlp_arch,
    "convnet": convnet_arch,
    "synth": synth_arch,
}


@dataclass
class LayerNode:
    node_id: int
    position: int  # trunk index, or -1 for a head node
    creator_task: int
    params: ParamGroup
    owner_tasks: list[int]
    # task -> task whose view this node was adopted from (creator for new nodes)
    bind_origin: dict[int, int] = field(default_factory=dict)

    def param_count(self) -> int:
        return self.params.size()


class JointNet:
    """One mutable network owned by one trial; snapshots are read-only."""

    def __init__(self, arch: Architecture, head_mode: str, seed: int):
        if head_mode not in ("shared", "per_task"):
            raise JointNetError(f"unknown head mode {head_mode!r}")
        self.arch = arch
        self.head_mode = head_mode
        self.seed = seed
        self.nodes: dict[int, LayerNode] = {}
        self.task_nets: dict[int, list[int]] = {}
        self.heads: dict[int, int] = {}
        self._next_id = 0

    # -- construction ------------------------------------------------------

    @classmethod
    def create(cls, arch: Architecture, task: int, head_mode: str = "shared", seed: int = 0) -> "JointNet":
        net = cls(arch, head_mode, seed)
        net.add_first_task(task)
        return net

    def add_first_task(self, task: int) -> None:
        if self.nodes:
            raise JointNetError("add_first_task on a non-empty network")
        chain = []
        for pos, block in enumerate(self.arch.blocks):
            chain.append(self._new_node(pos, task, self._init_params(task, pos, block.param_op())))
        self.task_nets[task] = chain
        head = self._new_node(-1, task, self._init_params(task, -1, self.arch.head_kind()))
        self.heads[task] = head

    def _init_params(self, task: int, pos: int, kind) -> ParamGroup:
        rng = np.random.default_rng([self.seed, 1117, task, pos + 1])
        return nn.init_params(kind, rng)

    def _new_node(self, position: int, task: int, params: ParamGroup) -> int:
        nid = self._next_id
        self._next_id += 1
        self.nodes[nid] = LayerNode(nid, position, task, params, [task], {task: task})
        return nid

    # -- bind / expand -----------------------------------------------------

    def bind_task(self, t: int, b: int) -> None:
        """Share task b's whole trunk with new task t."""
        if t in self.task_nets:
            raise JointNetError(f"task {t} already bound")
        if b not in self.task_nets:
            raise JointNetError(f"unknown bind target {b}")
        chain = list(self.task_nets[b])
        for nid in chain:
            node = self.nodes[nid]
            node.owner_tasks.append(t)
            node.bind_origin[t] = b
        self.task_nets[t] = chain
        if self.head_mode == "shared":
            head = self.heads[b]
            self.nodes[head].owner_tasks.append(t)
            self.nodes[head].bind_origin[t] = b
            self.heads[t] = head
        else:
            self.heads[t] = self._new_node(-1, t, self._init_params(t, -1, self.arch.head_kind()))

    def expand_layers(self, t: int, positions) -> None:
        """Clone each given trunk position for task t (warm-start copy init)."""
        if t not in self.task_nets:
            raise JointNetError(f"task {t} not bound")
        for pos in sorted(positions):
            old_id = self.task_nets[t][pos]
            old = self.nodes[old_id]
            if old.creator_task == t or len(old.owner_tasks) == 1:
                raise JointNetError(f"position {pos} already task-specific to {t}")
            new_id = self._new_node(pos, t, old.params.copy())
            old.owner_tasks.remove(t)
            old.bind_origin.pop(t, None)
            # replace only in t's chain; chains of other tasks keep the old node
            chain = list(self.task_nets[t])
            chain[pos] = new_id
            self.task_nets[t] = chain

    # -- execution ---------------------------------------------------------

    def forward_task(self, t: int, x: np.ndarray) -> np.ndarray:
        probs, _ = self.forward_task_with_cache(t, x)
        return probs

    def forward_task_with_cache(self, t: int, x: np.ndarray):
        if t not in self.task_nets:
            raise JointNetError(f"task {t} not in network")
        caches = []
        h = x
        for pos, nid in enumerate(self.task_nets[t]):
            node = self.nodes[nid]
            h, cache = nn.forward_block(self.arch.blocks[pos], node.params, h)
            caches.append((nid, cache, h))
        head = self.nodes[self.heads[t]]
        probs, hcache = self.arch.head_kind().forward(head.params, h)
        return probs, (caches, head.node_id, hcache)

    def trunk_activations(self, t: int, x: np.ndarray) -> list[np.ndarray]:
        """Post-activation matrix (N x flattened features) per trunk position."""
        _, (caches, _, _) = self.forward_task_with_cache(t, x)
        return [h.reshape(h.shape[0], -1).copy() for (_, _, h) in caches]

    # -- accounting --------------------------------------------------------

    def total_params(self) -> int:
        return sum(n.param_count() for n in self.nodes.values())

    def total_trunk_params(self) -> int:
        return sum(n.param_count() for n in self.nodes.values() if n.position >= 0)

    def task_params(self, t: int) -> int:
        ids = set(self.task_nets[t]) | {self.heads[t]}
        return sum(self.nodes[n].param_count() for n in ids)

    def tasks(self) -> list[int]:
        return sorted(self.task_nets)

    # -- tabular representation --------------------------------------------

    def tabular_repr(self) -> str:
        names = " ".join(self.arch.column_names())
        lines = [f"columns: [{names}]"]
        labels = {t: f"task_{t}:" for t in self.tasks()}
        width = max(len(v) for v in labels.values()) + 4
        for t in self.tasks():
            entries = []
            for nid in self.task_nets[t]:
                node = self.nodes[nid]
                entries.append("*" if node.creator_task == t else str(node.bind_origin[t]))
            lines.append(labels[t].rjust(width) + "  " + ", ".join(entries) + ",")
        return "\n".join(lines) + "\n"

    # -- structural checks (exercised heavily in tests) ---------------------

    def check_invariants(self) -> None:
        for t, chain in self.task_nets.items():
            if len(chain) != self.arch.depth:
                raise JointNetError(f"task {t} chain length {len(chain)} != depth {self.arch.depth}")
            for pos, nid in enumerate(chain):
                node = self.nodes[nid]
                if node.position != pos:
                    raise JointNetError(f"node {nid} at position {node.position}, expected {pos}")
                if t not in node.owner_tasks:
                    raise JointNetError(f"task {t} missing from owners of node {nid}")
        for node in self.nodes.values():
            if node.creator_task not in node.owner_tasks:
                raise JointNetError(f"creator {node.creator_task} not an owner of node {node.node_id}")
            if node.position >= 0:
                for t in node.owner_tasks:
                    if self.task_nets[t][node.position] != node.node_id:
                        raise JointNetError(f"owner {t} does not route through node {node.node_id}")

    # -- checkpointing -------------------------------------------------------

    def save(self, path: str) -> None:
        meta = {
            "arch": {
                "name": self.arch.name,
                "input_shape": list(self.arch.input_shape),
                "head_in": self.arch.head_in,
                "classes": self.arch.classes,
                "blocks": [
                    {"name": b.name, "ops": [nn.kind_to_dict(op) for op in b.ops]}
                    for b in self.arch.blocks
                ],
            },
            "head_mode": self.head_mode,
            "seed": self.seed,
            "next_id": self._next_id,
            "task_nets": {str(t): chain for t, chain in self.task_nets.items()},
            "heads": {str(t): h for t, h in self.heads.items()},
            "nodes": [
                {
                    "node_id": n.node_id,
                    "position": n.position,
                    "creator_task": n.creator_task,
                    "owner_tasks": n.owner_tasks,
                    "bind_origin": {str(k): v for k, v in n.bind_origin.items()},
                    "lr_scale": n.params.lr_scale,
                    "tensors": sorted(n.params.tensors),
                }
                for n in self.nodes.values()
            ],
        }
        arrays = {
            f"n{n.node_id}__{name}": t
            for n in self.nodes.values()
            for name, t in n.params.tensors.items()
        }
        buf = io.BytesIO()
        np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
        with open(path, "wb") as f:
            f.write(buf.getvalue())

    @classmethod
    def load(cls, path: str) -> "JointNet":
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            arrays = {k: z[k] for k in z.files if k != "__meta__"}
        blocks = tuple(
            BlockSpec(b["name"], tuple(nn.kind_from_dict(op) for op in b["ops"]))
            for b in meta["arch"]["blocks"]
        )
        arch = Architecture(
            meta["arch"]["name"],
            tuple(meta["arch"]["input_shape"]),
            blocks,
            meta["arch"]["head_in"],
            meta["arch"]["classes"],
        )
        net = cls(arch, meta["head_mode"], meta["seed"])
        net._next_id = meta["next_id"]
        net.task_nets = {int(t): list(chain) for t, chain in meta["task_nets"].items()}
        net.heads = {int(t): h for t, h in meta["heads"].items()}
        for nd in meta["nodes"]:
            tensors = {name: arrays[f"n{nd['node_id']}__{name}"].copy() for name in nd["tensors"]}
            net.nodes[nd["node_id"]] = LayerNode(
                nd["node_id"],
                nd["position"],
                nd["creator_task"],
                ParamGroup(tensors, nd["lr_scale"]),
                list(nd["owner_tasks"]),
                {int(k): v for k, v in nd["bind_origin"].items()},
            )
        return net


def parse_tabular(text: str):
    """Parse the tabular format back into {task: [entry, ...]} (test oracle)."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    header = lines[0]
    assert header.startswith("columns: [") and header.endswith("]")
    columns = header[len("columns: [") : -1].split()
    rows = {}
    for line in lines[1:]:
        label, _, rest = line.strip().partition(":")
        entries = [e.strip() for e in rest.split(",") if e.strip()]
        rows[int(label.split("_")[1])] = entries
    return columns, rows
