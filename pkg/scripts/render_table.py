"""Print the frozen literature comparison table (text, or --format csv/json)."""
import argparse

from master_seg.evaluation import format_report, reference_reports, report_csv, report_json


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--format", choices=["txt", "csv", "json"], default="txt")
    args = ap.parse_args()
    reports = reference_reports()
    render = {"txt": format_report, "csv": report_csv, "json": report_json}[args.format]
    print(render(reports), end="")


if __name__ == "__main__":
    main()
