"""
Command launcher that coordinates data, training, compilation and verification.
Each command returns a RunReport and writes its artifacts under the output directory.
"""

import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from core import circ
from core.circ import SynthesizedNetwork, basic_gate_cost
from core.config import SHIPPED_BACKENDS, Config
from core.data import Dataset, load_mnist, prepare, subset
from core.engine import (
    NetworkKind,
    NetworkSpec,
    TrainConfig,
    build_network,
    evaluate,
    forward_batch,
    layer_forward,
    layer_inputs,
)
from core.errors import UsageError
from core.mapping import assign_qbits, load_backends, naive_weight_map, select_backend, weight_map
from core.model_store import load_model, save_model
from core.reports import RunReport, write_csv, write_report
from core.simulator import Gate
from core.training import calibrate_bn, train
from ui.renderer import TextRenderer

logger = logging.getLogger(__name__)

Synthesizer = Callable[[NetworkSpec, np.ndarray], SynthesizedNetwork]

TRAIN_LOG_FIELDS = ["epoch", "loss", "train_acc", "test_acc"]
COST_FIELDS = ["k", "m", "sample", "R", "plan_cost", "naive_cost", "classical_ops", "neuron_cost"]
COST_SUMMARY_FIELDS = ["k", "m", "mean_plan_cost", "max_plan_cost", "bound", "mean_naive_cost",
                       "mean_neuron_cost", "classical_ops", "reduction_vs_classical",
                       "reduction_vs_naive"]
VERIFY_FIELDS = ["layer", "neuron", "kind", "qbits", "gates", "max_abs_dev", "status"]
CASESTUDY_FIELDS = ["x", "y", "label", "engine_p0", "circuit_p0", "engine_class",
                    "circuit_class", "agree"]
NETCOST_FIELDS = ["layer", "kind", "neurons", "width", "weight_gates", "overhead_gates",
                  "total", "bn_gates", "mlp_operators", "reduction"]


def activation_overhead(k: int) -> int:
    """Basic gates after the sign flips of a U-LYR neuron: H and X per qbit plus C^kX."""
    return 2 * k + basic_gate_cost(Gate.cx(list(range(k)), k))


def casestudy_label(x: float, y: float) -> int:
    """Class 0 where the 2-input neuron's x+y-2xy reaches one half."""
    return 0 if x + y - 2.0 * x * y >= 0.5 else 1


def verify_network(net: NetworkSpec, images: np.ndarray, tolerance: float,
                   synthesize: Optional[Synthesizer] = None,
                   merged_bn: bool = True) -> List[Dict]:
    """Per-neuron maximum |P_circuit - P_engine| over the given images."""
    synthesize = synthesize or (lambda n, img: circ.synth_network(n, img, merged_bn=merged_bn))
    deviations = [np.zeros(layer.size) for layer in net.layers]
    shapes: List[List[tuple]] = [[(0, 0)] * layer.size for layer in net.layers]
    for image in images:
        activations = layer_inputs(net, image)
        synthesized = synthesize(net, image)
        for position, layer in enumerate(net.layers):
            activations = layer_forward(layer, activations)
            for j, neuron in enumerate(synthesized.layers[position]):
                dev = abs(neuron.probability() - activations[0, j])
                deviations[position][j] = max(deviations[position][j], dev)
                shapes[position][j] = (neuron.circuit.num_qbits, len(neuron.circuit.gates))

    rows = []
    for position, layer in enumerate(net.layers):
        for j in range(layer.size):
            dev = float(deviations[position][j])
            status = "PASS" if dev < tolerance else "FAIL"
            if status == "FAIL":
                logger.warning("neuron L%d.%d deviates by %.3e", position + 1, j, dev)
            else:
                logger.debug("neuron L%d.%d max deviation %.3e", position + 1, j, dev)
            rows.append({
                "layer": position + 1, "neuron": j, "kind": layer.kind.value,
                "qbits": shapes[position][j][0], "gates": shapes[position][j][1],
                "max_abs_dev": dev, "status": status,
            })
    return rows


class CommandLauncher:
    """Runs the train / verify / cost / casestudy / netcost commands."""

    def __init__(self, config: Config, renderer: Optional[TextRenderer] = None):
        self.config = config
        self.renderer = renderer or TextRenderer()

    @property
    def out_dir(self) -> Path:
        return Path(self.config.get('output.out_dir', 'runs'))

    def _report(self, command: str, seed: Optional[int]) -> RunReport:
        logger.info("starting %s (seed=%s)", command, seed)
        return RunReport(command, self.config.as_dict(), seed)

    def _finish(self, report: RunReport, filename: Optional[str] = None) -> RunReport:
        report.finish()
        write_report(self.out_dir / (filename or f"{report.command}_report.json"), report)
        logger.info("%s finished in %.1fs", report.command, report.wall_time)
        return report

    def _train_config(self, section: str = 'training') -> TrainConfig:
        get = self.config.get
        return TrainConfig(
            learning_rate=float(get(f'{section}.learning_rate', 0.5)),
            batch_size=int(get(f'{section}.batch_size', 32)),
            epochs=int(get(f'{section}.epochs', 10)),
            seed=int(get('training.seed', 0)),
            momentum=float(get('training.momentum', 0.1)),
            latent_clip=float(get('training.latent_clip', 1.0)),
        )

    # Step: train

    def load_datasets(self) -> tuple:
        data_dir = Path(self.config.get('data.data_dir'))
        classes = self.config.get('network.classes')
        resolution = self.config.get('network.resolution')
        train_set = prepare(subset(load_mnist(data_dir, 'train'), classes), resolution)
        test_set = prepare(subset(load_mnist(data_dir, 'test'), classes), resolution)
        logger.info("classes %s at %dx%d: %d train / %d test samples",
                    classes, resolution, resolution, len(train_set), len(test_set))
        return train_set, test_set

    def cmd_train(self, train_set: Optional[Dataset] = None,
                  test_set: Optional[Dataset] = None) -> RunReport:
        """Train a network and write model.json, train_log.csv and report.json."""
        cfg = self._train_config()
        report = self._report('train', cfg.seed)
        if train_set is None:
            train_set, test_set = self.load_datasets()

        kind = NetworkKind(self.config.get('network.kind'))
        use_bn = bool(self.config.get('network.bn', True))
        arch = list(self.config.get('network.arch'))
        net = build_network(kind, train_set.shape, arch, train_set.class_count,
                            bn=use_bn, seed=cfg.seed, momentum=cfg.momentum)

        total = cfg.epochs
        net, history = train(net, train_set, cfg, test_set,
                             on_epoch=lambda r: self.renderer.progress(f"epoch {r.epoch}/{total}", r.epoch, total))
        rows = [r.to_row() for r in history.records]
        write_csv(self.out_dir / 'train_log.csv', rows, TRAIN_LOG_FIELDS)
        save_model(self.out_dir / 'model.json', net)

        report.metrics = rows
        report.summary = {
            "network": kind.value,
            "arch": arch,
            "bn": use_bn,
            "train_acc": evaluate(net, train_set),
            "test_acc": evaluate(net, test_set) if test_set is not None else None,
        }
        self.renderer.banner("TRAINING COMPLETE", f"{kind.value} {arch} bn={'on' if use_bn else 'off'}")
        self.renderer.key_values(report.summary)
        return self._finish(report, 'report.json')

    # Step: verify

    def _verification_images(self, net: NetworkSpec, count: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.uniform(0.05, 1.0, size=(count,) + net.input_shape)

    def cmd_verify(self, model_path: Optional[Path] = None, net: Optional[NetworkSpec] = None,
                   emit_dir: Optional[Path] = None,
                   synthesize: Optional[Synthesizer] = None) -> RunReport:
        """Compare every compiled neuron against the engine; PASS iff all deviations are below tolerance."""
        seed = int(self.config.get('training.seed', 0))
        report = self._report('verify', seed)
        if net is None:
            net = load_model(model_path or self.out_dir / 'model.json')
        tolerance = float(self.config.get('verify.tolerance', 1e-9))
        merged = bool(self.config.get('network.merge_bn', True))
        images = self._verification_images(net, int(self.config.get('verify.samples', 20)), seed)

        rows = verify_network(net, images, tolerance, synthesize, merged)
        write_csv(self.out_dir / 'verify.csv', rows, VERIFY_FIELDS)
        failed = [f"L{r['layer']}.{r['neuron']}" for r in rows if r['status'] == 'FAIL']
        verdict = "FAIL" if failed else "PASS"

        if emit_dir is not None:
            synthesized = circ.synth_network(net, images[0], merged_bn=merged)
            for position, neurons in enumerate(synthesized.layers):
                circ.emit_circuit(Path(emit_dir) / f"layer{position + 1}_neuron0.circ", neurons[0].circuit)

        report.metrics = rows
        report.summary = {
            "verdict": verdict,
            "failed_neurons": failed,
            "max_abs_dev": max(r['max_abs_dev'] for r in rows),
            "tolerance": tolerance,
            "inputs": len(images),
        }
        self.renderer.table(rows, VERIFY_FIELDS)
        self.renderer.emit(f"verdict: {verdict}" + (f" ({', '.join(failed)})" if failed else ""))
        logger.info("verification %s", verdict)
        return self._finish(report)

    # Step: cost

    def cmd_cost(self) -> RunReport:
        """Plan cost vs naive and classical operator counts over random weight vectors."""
        seed = int(self.config.get('cost.seed', 0))
        report = self._report('cost', seed)
        rng = np.random.default_rng(seed)
        k_min = int(self.config.get('cost.k_min', 4))
        k_max = int(self.config.get('cost.k_max', 11))
        samples = int(self.config.get('cost.samples', 50))

        rows, summary_rows = [], []
        for k in range(k_min, k_max + 1):
            m = 1 << k
            overhead = activation_overhead(k)
            plan_costs, naive_costs = [], []
            for sample in range(samples):
                w = rng.choice([-1, 1], size=m)
                plan = weight_map(w)
                naive = naive_weight_map(w)
                plan_costs.append(plan.cost)
                naive_costs.append(naive.cost)
                rows.append({
                    "k": k, "m": m, "sample": sample, "R": int(np.count_nonzero(w < 0)),
                    "plan_cost": plan.cost, "naive_cost": naive.cost,
                    "classical_ops": 2 * m, "neuron_cost": plan.cost + overhead,
                })
            mean_plan = float(np.mean(plan_costs))
            summary_rows.append({
                "k": k, "m": m,
                "mean_plan_cost": mean_plan,
                "max_plan_cost": int(max(plan_costs)),
                "bound": k * k + 1,
                "mean_naive_cost": float(np.mean(naive_costs)),
                "mean_neuron_cost": mean_plan + overhead,
                "classical_ops": 2 * m,
                "reduction_vs_classical": 2 * m / mean_plan if mean_plan else math.inf,
                "reduction_vs_naive": float(np.mean(naive_costs)) / mean_plan if mean_plan else math.inf,
            })
            logger.info("k=%d: mean plan cost %.2f, reduction %.1fx", k, mean_plan,
                        summary_rows[-1]["reduction_vs_classical"])

        write_csv(self.out_dir / 'cost.csv', rows, COST_FIELDS)
        write_csv(self.out_dir / 'cost_summary.csv', summary_rows, COST_SUMMARY_FIELDS)
        report.metrics = summary_rows
        report.summary = {"k_range": [k_min, k_max], "samples": samples}
        self.renderer.banner("WEIGHT MAPPING COST", f"{samples} random weight vectors per k")
        self.renderer.table(summary_rows, ["k", "m", "mean_plan_cost", "max_plan_cost", "bound",
                                           "classical_ops", "reduction_vs_classical"])
        return self._finish(report)

    # Step: case study

    def _casestudy_net(self, seed: int) -> tuple:
        rng = np.random.default_rng(seed)
        count = int(self.config.get('casestudy.samples', 400))
        points = rng.uniform(0.0, 1.0, size=(count, 2))
        labels = np.array([casestudy_label(x, y) for x, y in points])
        train_set = Dataset(points.reshape(count, 1, 2), labels, {0: 0, 1: 1})
        net = build_network(NetworkKind.PNET, (1, 2), [1], 2, bn=True, seed=seed)
        cfg = TrainConfig(
            learning_rate=float(self.config.get('casestudy.learning_rate', 0.5)),
            batch_size=int(self.config.get('casestudy.batch_size', 16)),
            epochs=int(self.config.get('casestudy.epochs', 60)),
            seed=seed,
            momentum=float(self.config.get('training.momentum', 0.1)),
        )
        net, _ = train(net, train_set, cfg)
        if self.config.get('casestudy.calibrate_bn', True):
            calibrate_bn(net, train_set)
        return net, train_set

    def casestudy_circuit(self, net: NetworkSpec, x: float, y: float) -> circ.SynthesizedNeuron:
        """One-qbit neuron plus its N-LYR fragment for input (x, y)."""
        layer = net.layers[0]
        neuron = circ.synth_neuron_design4(circ.probability_angle(x), circ.probability_angle(y),
                                           layer.weight_matrix()[0])
        merged = bool(self.config.get('network.merge_bn', True))
        return circ.attach_bn(neuron, circ.synth_bn(layer.bn[0].inference(), merged))

    def cmd_casestudy(self, backend_file: Optional[Path] = None) -> RunReport:
        """Train the 2-input classifier, then compare engine and circuit on the input grid."""
        seed = int(self.config.get('training.seed', 0))
        report = self._report('casestudy', seed)
        net, train_set = self._casestudy_net(seed)
        grid = int(self.config.get('casestudy.grid', 10))
        values = [round((i + 1) / grid, 10) for i in range(grid)]

        rows = []
        for x in values:
            for y in values:
                engine_p0 = float(forward_batch(net, np.array([[[x, y]]]))[0, 0])
                circuit_p0 = self.casestudy_circuit(net, x, y).probability()
                engine_class = 0 if engine_p0 >= 0.5 else 1
                circuit_class = 0 if circuit_p0 >= 0.5 else 1
                rows.append({
                    "x": x, "y": y, "label": casestudy_label(x, y),
                    "engine_p0": engine_p0, "circuit_p0": circuit_p0,
                    "engine_class": engine_class, "circuit_class": circuit_class,
                    "agree": int(engine_class == circuit_class),
                })
        agreement = sum(r["agree"] for r in rows)
        if agreement < len(rows):
            logger.warning("engine and circuit disagree on %d grid points", len(rows) - agreement)

        sample_circuit = self.casestudy_circuit(net, 0.2, 0.6)
        backends = load_backends(backend_file or SHIPPED_BACKENDS)
        backend = select_backend(sample_circuit.circuit, backends)
        mapping = assign_qbits(sample_circuit.circuit, backend)
        symmetric_dev = max(
            abs(circ.synth_neuron_design4(circ.probability_angle(v), circ.probability_angle(v), [-1, 1]).probability()
                - (2 * v - 2 * v * v))
            for v in values
        )

        write_csv(self.out_dir / 'casestudy.csv', rows, CASESTUDY_FIELDS)
        report.metrics = rows
        report.summary = {
            "weights": [int(v) for v in net.layers[0].weight_matrix()[0]],
            "agreement": agreement,
            "grid_points": len(rows),
            "engine_accuracy": sum(r["engine_class"] == r["label"] for r in rows) / len(rows),
            "circuit_accuracy": sum(r["circuit_class"] == r["label"] for r in rows) / len(rows),
            "train_accuracy": evaluate(net, train_set),
            "p0_at_0.2_0.6": sample_circuit.probability(),
            "symmetric_max_dev": symmetric_dev,
            "backend": backend.name,
            "assignment": mapping.to_dict()["assignment"],
        }
        self.renderer.banner("CASE STUDY", f"{grid}x{grid} grid, backend {backend.name}")
        self.renderer.key_values(report.summary)
        return self._finish(report)

    # Step: network cost

    def cmd_netcost(self, model_path: Optional[Path] = None,
                    net: Optional[NetworkSpec] = None) -> RunReport:
        """Per-layer compiled gate counts against classical MLP operators."""
        report = self._report('netcost', None)
        if net is None:
            net = load_model(model_path or self.out_dir / 'model.json')
        cost = circ.network_gate_counts(net, bool(self.config.get('network.merge_bn', True)))
        rows = []
        for position, layer in enumerate(cost.layers):
            rows.append({
                "layer": f"L{position + 1}", "kind": layer.kind, "neurons": layer.neurons,
                "width": layer.width, "weight_gates": layer.weight_gates,
                "overhead_gates": layer.overhead_gates, "total": layer.total,
                "bn_gates": layer.bn_gates, "mlp_operators": layer.mlp_operators,
                "reduction": layer.mlp_operators / layer.total if layer.total else math.inf,
            })
        rows.append({
            "layer": "Tot", "kind": "", "neurons": sum(l.neurons for l in cost.layers), "width": "",
            "weight_gates": sum(l.weight_gates for l in cost.layers),
            "overhead_gates": sum(l.overhead_gates for l in cost.layers),
            "total": cost.total, "bn_gates": cost.bn_total, "mlp_operators": cost.mlp_total,
            "reduction": cost.reduction,
        })
        write_csv(self.out_dir / 'netcost.csv', rows, NETCOST_FIELDS)
        report.metrics = rows
        report.summary = {"total_gates": cost.total, "mlp_operators": cost.mlp_total,
                          "reduction": cost.reduction, "bn_gates": cost.bn_total}
        self.renderer.table(rows, NETCOST_FIELDS)
        return self._finish(report)

    def run(self, args) -> int:
        """Dispatch parsed arguments; returns the process exit code."""
        command = args.command
        if command == 'train':
            self.cmd_train()
        elif command == 'verify':
            report = self.cmd_verify(args.model, emit_dir=args.emit_circuit)
            return 0 if report.summary["verdict"] == "PASS" else 1
        elif command == 'cost':
            self.cmd_cost()
        elif command == 'casestudy':
            self.cmd_casestudy(args.backend_file)
        elif command == 'netcost':
            self.cmd_netcost(args.model)
        else:
            raise UsageError(f"unknown command '{command}'")
        return 0
