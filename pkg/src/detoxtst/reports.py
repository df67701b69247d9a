"""Report writers: Table-shaped JSON + markdown, plus rendered figures."""

import csv
import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

METRICS = ("acc", "bleu", "cs", "ppl")
METRIC_LABELS = {"acc": "ACC", "bleu": "BLEU", "cs": "CS", "ppl": "PPL"}


def rows_to_dicts(rows):
    return [
        {
            "system": r.system,
            "lang": r.lang,
            "ACC": r.acc,
            "BLEU": r.bleu,
            "CS": r.cs,
            "PPL": r.ppl,
            "n": r.n,
            "warnings": list(r.warnings),
        }
        for r in rows
    ]


def write_report_json(rows, path, fingerprint=""):
    doc = {"config_fingerprint": fingerprint, "rows": rows_to_dicts(rows)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


def write_report_md(rows, path, fingerprint=""):
    lines = [
        "| Model | Lang | ACC | BLEU | CS | PPL |",
        "|---|---|---|---|---|---|",
    ]
    for r in rows:
        lines.append(f"| {r.system} | {r.lang} | {r.acc:.1f} | {r.bleu:.1f} | {r.cs:.1f} | {r.ppl:.1f} |")
    if fingerprint:
        lines.append("")
        lines.append(f"config fingerprint: `{fingerprint}`")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def render_metrics_figure(rows, path):
    """One bar panel per metric, systems on the x axis."""
    fig, axes = plt.subplots(1, len(METRICS), figsize=(4 * len(METRICS), 3.2))
    names = [r.system for r in rows]
    for ax, metric in zip(axes, METRICS):
        values = [getattr(r, metric) for r in rows]
        ax.bar(range(len(rows)), values, color="#4878a8")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_title(METRIC_LABELS[metric])
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_loss_csv(loss_log, path):
    """Loss log with wall-clock isolated in its own column."""
    fields = ["epoch", "seq2seq", "cls_ip", "cls_gr_ip", "cls_op", "reconstruction", "total", "wall_seconds"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, restval="")
        writer.writeheader()
        for row in loss_log:
            writer.writerow({k: row.get(k, "") for k in fields})


def render_loss_curve(loss_log, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = [row["epoch"] for row in loss_log]
    for key in ("seq2seq", "reconstruction", "cls_ip", "cls_gr_ip", "cls_op", "total"):
        values = [row[key] for row in loss_log if key in row]
        if len(values) == len(epochs) and values:
            ax.plot(epochs, values, marker="o", markersize=3, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.grid(alpha=0.3)
    if loss_log:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
