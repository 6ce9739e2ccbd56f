"""Regenerates the desk suite: CSV data, reference PNGs and items.jsonl.

Run from any directory: python3 suites/desk/make_suite.py
"""
import csv
import json
import math
import random
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

ROOT = Path(__file__).resolve().parent
DATA = ROOT / "data"
GT = ROOT / "gt"
rng = random.Random(7)


def write_csv(name, header, rows):
    DATA.mkdir(exist_ok=True)
    with open(DATA / name, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def save(fig, name):
    GT.mkdir(exist_ok=True)
    fig.tight_layout()
    fig.savefig(GT / name, dpi=60)
    plt.close(fig)


months = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"]
regions = ["North", "South", "East", "West"]
items = []

# 1 monthly revenue trend
rev = [round(100 + 8 * i + rng.uniform(-6, 6), 1) for i in range(12)]
write_csv("revenue.csv", ["month", "revenue"], zip(months, rev))
fig, ax = plt.subplots(figsize=(6, 4))
ax.plot(months, rev, marker="o")
ax.set_title("Monthly revenue")
ax.set_ylabel("revenue (k$)")
save(fig, "revenue_trend.png")
items.append(dict(id="revenue-trend", query="How did revenue develop over the year?",
                  dataset_description="revenue.csv: month (Jan..Dec, str), revenue (float, thousands of dollars)",
                  data_files=[dict(name="revenue.csv", path="data/revenue.csv")], gt_image="gt/revenue_trend.png", subset="easy"))

# 2 sales by region
sales = [rng.randint(40, 120) for _ in regions]
write_csv("region_sales.csv", ["region", "units"], zip(regions, sales))
fig, ax = plt.subplots(figsize=(6, 4))
ax.bar(regions, sales, color="tab:blue")
ax.set_title("Units sold by region")
save(fig, "region_sales.png")
items.append(dict(id="region-sales", query="Compare the regions.",
                  dataset_description="region_sales.csv: region (str), units (int, units sold in 2023)",
                  data_files=[dict(name="region_sales.csv", path="data/region_sales.csv")], gt_image="gt/region_sales.png", subset="easy"))

# 3 market share
shares = [34, 27, 21, 12, 6]
brands = ["Acme", "Bolt", "Crest", "Dyna", "Other"]
write_csv("market_share.csv", ["brand", "share"], zip(brands, shares))
fig, ax = plt.subplots(figsize=(5, 5))
ax.pie(shares, labels=brands, autopct="%1.0f%%")
ax.set_title("Market share")
save(fig, "market_share.png")
items.append(dict(id="market-share", query="Show who dominates the market.",
                  dataset_description="market_share.csv: brand (str), share (int, percent of 2023 sales)",
                  data_files=[dict(name="market_share.csv", path="data/market_share.csv")], gt_image="gt/market_share.png", subset="easy"))

# 4 height vs weight
hw = [(round(h, 1), round(0.9 * h - 85 + rng.gauss(0, 6), 1)) for h in (rng.uniform(150, 195) for _ in range(60))]
write_csv("people.csv", ["height_cm", "weight_kg"], hw)
fig, ax = plt.subplots(figsize=(6, 4))
ax.scatter([h for h, _ in hw], [w for _, w in hw], s=12)
ax.set_xlabel("height (cm)")
ax.set_ylabel("weight (kg)")
ax.set_title("Height vs weight")
save(fig, "height_weight.png")
items.append(dict(id="height-weight", query="Is there a relationship between the two body measurements?",
                  dataset_description="people.csv: height_cm (float), weight_kg (float); one row per person",
                  data_files=[dict(name="people.csv", path="data/people.csv")], gt_image="gt/height_weight.png", subset="hard"))

# 5 response time distribution
latency = [round(rng.lognormvariate(3.5, 0.5), 1) for _ in range(300)]
write_csv("latency.csv", ["request_id", "latency_ms"], enumerate(latency, 1))
fig, ax = plt.subplots(figsize=(6, 4))
ax.hist(latency, bins=30)
ax.set_xlabel("latency (ms)")
ax.set_title("Response time distribution")
save(fig, "latency_hist.png")
items.append(dict(id="latency-distribution", query="What do typical response times look like?",
                  dataset_description="latency.csv: request_id (int), latency_ms (float)",
                  data_files=[dict(name="latency.csv", path="data/latency.csv")], gt_image="gt/latency_hist.png", subset="hard"))

# 6 temperature by city, grouped
cities = ["Oslo", "Rome", "Cairo"]
rows = []
for c, base in zip(cities, [5, 16, 24]):
    for q, m in enumerate(["Q1", "Q2", "Q3", "Q4"]):
        rows.append((c, m, round(base + 8 * math.sin(q * math.pi / 2), 1)))
write_csv("city_temps.csv", ["city", "quarter", "temp_c"], rows)
fig, ax = plt.subplots(figsize=(6, 4))
width = 0.25
for i, c in enumerate(cities):
    vals = [r[2] for r in rows if r[0] == c]
    ax.bar([q + i * width for q in range(4)], vals, width, label=c)
ax.set_xticks([q + width for q in range(4)], ["Q1", "Q2", "Q3", "Q4"])
ax.legend()
ax.set_title("Average temperature by quarter")
save(fig, "city_temps.png")
items.append(dict(id="city-temperatures", query="Contrast the seasons in these cities.",
                  dataset_description="city_temps.csv: city (str), quarter (Q1..Q4), temp_c (float, mean temperature); long format",
                  data_files=[dict(name="city_temps.csv", path="data/city_temps.csv")], gt_image="gt/city_temps.png", subset="hard"))

# 7 cumulative signups
daily = [rng.randint(5, 30) for _ in range(30)]
write_csv("signups.csv", ["day", "new_users"], enumerate(daily, 1))
cum = [sum(daily[: i + 1]) for i in range(30)]
fig, ax = plt.subplots(figsize=(6, 4))
ax.fill_between(range(1, 31), cum, alpha=0.5)
ax.plot(range(1, 31), cum)
ax.set_xlabel("day")
ax.set_title("Cumulative signups")
save(fig, "signups.png")
items.append(dict(id="cumulative-signups", query="Visualize how the user base grew.",
                  dataset_description="signups.csv: day (int, 1..30), new_users (int, signups on that day)",
                  data_files=[dict(name="signups.csv", path="data/signups.csv")], gt_image="gt/signups.png", subset="hard"))

# 8 exam scores by class, box plot
classes = ["A", "B", "C"]
rows = [(c, round(rng.gauss(mu, 8), 1)) for c, mu in zip(classes, [72, 65, 80]) for _ in range(25)]
write_csv("exam_scores.csv", ["class", "score"], rows)
fig, ax = plt.subplots(figsize=(6, 4))
ax.boxplot([[s for c2, s in rows if c2 == c] for c in classes], tick_labels=classes)
ax.set_title("Exam scores by class")
save(fig, "exam_scores.png")
items.append(dict(id="exam-spread", query="How do the classes differ in their results?",
                  dataset_description="exam_scores.csv: class (A, B or C), score (float, 0-100); one row per student",
                  data_files=[dict(name="exam_scores.csv", path="data/exam_scores.csv")], gt_image="gt/exam_scores.png", subset="easy"))

# 9 no reference image: budget split
depts = ["R&D", "Sales", "Support", "Admin"]
budget = [420, 310, 150, 90]
write_csv("budget.csv", ["department", "budget_k"], zip(depts, budget))
items.append(dict(id="budget-split", query="Where does the money go?",
                  dataset_description="budget.csv: department (str), budget_k (int, thousands of dollars)",
                  data_files=[dict(name="budget.csv", path="data/budget.csv")], subset="easy"))

# 10 no data file, no reference image
items.append(dict(id="sine-wave", query="Plot one period of a sine wave.",
                  dataset_description="No data file; generate the values in the script."))

with open(ROOT / "items.jsonl", "w") as f:
    for item in items:
        f.write(json.dumps(item) + "\n")
print(f"wrote {len(items)} items")
