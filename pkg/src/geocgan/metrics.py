"""Append-only per-epoch metric records and their CSV form."""
import csv
import io

REGISTRY = (
    "loss_gh", "loss_lh", "loss_rec", "loss_adv_g", "loss_adv_d", "loss_total",
    "walk_norm", "tau_min", "tau_median", "tau_max", "velocity_cv",
)


class MetricsLog:
    def __init__(self):
        self.records = []

    def append(self, epoch, name, value):
        if name not in REGISTRY:
            raise KeyError(f"metric {name!r} is not registered")
        if self.records and epoch < self.records[-1][0]:
            raise ValueError("metric epochs must be non-decreasing")
        self.records.append((int(epoch), name, float(value)))

    def extend(self, epoch, values):
        for name in REGISTRY:
            if name in values:
                self.append(epoch, name, values[name])

    def series(self, name):
        return [(e, v) for e, n, v in self.records if n == name]

    def last(self, name):
        s = self.series(name)
        return s[-1][1] if s else None

    def __len__(self):
        return len(self.records)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "name", "value"])
        for e, n, v in self.records:
            w.writerow([e, n, repr(v)])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read(cls, path):
        log = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                log.append(int(row["epoch"]), row["name"], float(row["value"]))
        return log
