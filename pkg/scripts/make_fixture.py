"""Write a seeded staggered-adoption panel (wide CSV + adoption CSV) for trying the CLI.

    python3 scripts/make_fixture.py --out demo --effect 1.5
    castpanel analyze --panel demo/panel.csv --adoption demo/adoption.csv --out demo/results
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from castpanel.panel_io import write_adoption_csv, write_panel_csv
from castpanel.staggered import PanelData
from castpanel.synth import default_params, generate_panel


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True)
    parser.add_argument("--units", type=int, default=50)
    parser.add_argument("--periods", type=int, default=15)
    parser.add_argument("--first-year", type=int, default=2008)
    parser.add_argument("--noise-var", type=float, default=0.05)
    parser.add_argument("--effect", type=float, default=0.0, help="constant lift added to treated cells")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    panel = generate_panel(default_params(2, args.noise_var), args.units, args.periods, args.seed)
    Y = panel.Y + args.effect * panel.schedule.treated_mask(args.periods)
    data = PanelData(Y, tuple(f"U{i:03d}" for i in range(args.units)),
                     tuple(str(args.first_year + t) for t in range(args.periods)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_panel_csv(data, out / "panel.csv")
    write_adoption_csv(data, panel.schedule, out / "adoption.csv")
    np.savetxt(out / "truth.csv", panel.M_star, delimiter=",", fmt="%.17g")
    print(f"wrote {out}/panel.csv, adoption.csv, truth.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
