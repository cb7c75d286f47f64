"""COVID-shaped run: 25 nodes, 110 days, train on 60, roll forecasts over the last 50."""

import argparse

from stemgnn.experiments import covid_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--model-seed", type=int, default=0)
    args = ap.parse_args()
    run = covid_run(args.data_seed, args.model_seed)
    print("\n".join(run.lines()))


if __name__ == "__main__":
    main()
