"""Per-run metric records and their CSV serialization."""

from dataclasses import dataclass, field


CSV_HEADER = "eval_step,mean_return,std_return,disc_loss,critic_loss,policy_objective"


@dataclass
class EvalRow:
    eval_step: int
    mean_return: float
    std_return: float
    disc_loss: float
    critic_loss: float
    policy_objective: float


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    rows: list = field(default_factory=list)
    wall_time_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def csv_bytes(self):
        """Deterministic bytes: wall time is deliberately excluded."""
        lines = [CSV_HEADER]
        for row in self.rows:
            lines.append(",".join(
                [str(row.eval_step)]
                + [format(v, ".17g") for v in (row.mean_return, row.std_return,
                                               row.disc_loss, row.critic_loss,
                                               row.policy_objective)]))
        return ("\n".join(lines) + "\n").encode()

    def write_csv(self, path):
        with open(path, "wb") as f:
            f.write(self.csv_bytes())

    @property
    def final_mean_return(self):
        if not self.rows:
            raise ValueError("run record has no evaluation rows")
        return self.rows[-1].mean_return
