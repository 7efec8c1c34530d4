#!/usr/bin/env python3
"""Regenerates the catalog fixtures. Output is deterministic; rerun after
editing the vocabularies below and commit the results."""

import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
rng = random.Random(20240611)

PREFIXES = ["Hotel", "Albergo", "Residence", "Palazzo", "Villa", "Locanda", "Grand Hotel", "B&B"]
NAMES = [
    "Aurora", "del Sole", "Belvedere", "Miramare", "San Marco", "Bellavista", "La Pergola",
    "Le Rose", "Vittoria", "Mediterraneo", "Stella Maris", "Il Faro", "Gardenia", "Cavour",
    "Corallo", "Dei Fiori", "Riviera", "Paradiso", "Leone", "Tramonto",
]
CITIES = ["Naples", "Rome", "Milan", "Florence", "Bari", "Turin", "Venice", "Palermo", "Genoa", "Bologna"]

LEISURE = [
    "Outdoor swimming pool", "Indoor pool", "Fitness centre", "Spa with sauna", "Turkish bath",
    "Tennis court", "Bicycle rental", "Private beach area", "Kids club", "Games room",
    "Yoga classes", "Hiking trails", "Rooftop terrace", "Hot tub", "Billiards",
]
SERVICES = [
    "24-hour front desk", "Free WiFi in all areas", "Luggage storage", "Concierge service",
    "Airport shuttle", "Laundry service", "Daily housekeeping", "Private parking",
    "Car rental desk", "Currency exchange", "Express check-in", "Lift",
]
DINING = [
    "Breakfast buffet", "A la carte restaurant", "Lobby bar", "Room service",
    "Vegetarian options", "Gluten-free menu", "Pool bar", "Wine cellar", "Packed lunches",
]
ROOMS = [
    "Air conditioning", "Flat-screen TV", "Minibar", "Private bathroom", "Balcony with sea view",
    "In-room safe", "Coffee machine", "Hairdryer", "Soundproofing", "Work desk", "Bathrobe",
]
EXTRAS = [
    "Pets allowed on request", "Wedding services", "Meeting rooms", "Babysitting",
    "Ticket service", "Tour desk", "Electric vehicle charging", "Ski storage",
]
SURROUNDINGS = [
    "The beach is {n}mt away.", "Central station is a {m} min. walk.", "Cathedral {k} km.",
    "The airport is {m2} minutes by car.", "Old harbour {n} metres away.",
    "The archaeological museum is a {m} min walk.", "City park at {k} km.",
]

# Markup and entity noise applied to a fraction of the primary values.
def noisy(item):
    r = rng.random()
    if r < 0.15:
        return f"<b>{item}</b>"
    if r < 0.25:
        return item.replace(" ", "&nbsp;", 1)
    if r < 0.30:
        return f"<span class=\"hl\">{item}</span>"
    return item


def pick(pool, lo, hi):
    return rng.sample(pool, rng.randint(lo, hi))


def surroundings():
    out = []
    for tpl in rng.sample(SURROUNDINGS, rng.randint(2, 4)):
        out.append(tpl.format(n=rng.choice([150, 300, 500, 800]), m=rng.choice([5, 10, 15]),
                              m2=rng.choice([20, 25, 40]), k=rng.choice(["1,5", "2", "3,2"])))
    return " ".join(out)


def shout(name):
    return name.upper() if rng.random() < 0.5 else name.replace(" ", "  ")


facilities = []
seen = set()
while len(facilities) < 120:
    name = f"{rng.choice(PREFIXES)} {rng.choice(NAMES)}"
    city = rng.choice(CITIES)
    if (name, city) in seen:
        continue
    seen.add((name, city))
    n = len(facilities) + 1
    f = {
        "n": n, "name": name, "city": city,
        "leisure": pick(LEISURE, 3, 5), "services": pick(SERVICES, 4, 6),
        "dining": pick(DINING, 3, 4), "rooms": pick(ROOMS, 4, 6),
        "extras": pick(EXTRAS, 2, 3), "surroundings": surroundings(),
        "vista_leisure": pick(LEISURE, 2, 3),
    }
    # Some primary records lack leisure; the third provider fills it in.
    f["primary_has_leisure"] = rng.random() > 0.15
    facilities.append(f)

# Primary: structured JSON, every facility.
nw = {"facilities": []}
for f in facilities:
    fields = {
        "services": ", ".join(noisy(x) for x in f["services"]),
        "dining": ", ".join(noisy(x) for x in f["dining"]),
        "rooms": ", ".join(noisy(x) for x in f["rooms"]),
    }
    if f["primary_has_leisure"]:
        fields["leisure"] = ", ".join(noisy(x) for x in f["leisure"])
    nw["facilities"].append({"id": f"NW-{f['n']:03d}", "name": f["name"], "city": f["city"], "fields": fields})
(HERE / "catalogs").mkdir(exist_ok=True)
(HERE / "catalogs" / "northwind.json").write_text(json.dumps(nw, indent=1, ensure_ascii=False) + "\n")

# Second provider: tab-separated, two thirds of the facilities, shouted names.
rows = ["id\tname\tcity\trooms\textras"]
for f in facilities:
    if f["n"] % 3 == 0:
        continue
    rows.append("\t".join([f"T{1000 + f['n']}", shout(f["name"]), f["city"],
                           ", ".join(rng.sample(ROOMS, 3)), ", ".join(f["extras"])]))
(HERE / "catalogs" / "tabula.tsv").write_text("\n".join(rows) + "\n")

# Third provider: HTML fragments, half of the facilities.
html = []
for f in facilities:
    if f["n"] % 2 == 1 and f["primary_has_leisure"]:
        continue
    leisure = ", ".join(f["vista_leisure"])
    html.append(
        f"<div class=\"facility\" data-id=\"v-{f['n']}\" data-name=\"{f['name'].replace('&', '&amp;')}\" "
        f"data-city=\"{f['city']}\">\n"
        f"  <section data-field=\"leisure\"><ul><li>{leisure}</li></ul></section>\n"
        f"  <section data-field=\"surroundings\"><p>{f['surroundings']}</p></section>\n"
        f"</div>")
(HERE / "catalogs" / "vista.html").write_text("\n".join(html) + "\n")

# Reference brochures for the training split.
refs = {}
for f in facilities:
    refs[f"NW-{f['n']:03d}"] = (
        f"{f['name']} welcomes you in the heart of {f['city']}. Guests can enjoy "
        f"{', '.join(x.lower() for x in f['leisure'][:2])} and "
        f"{f['services'][0].lower()}. Rooms offer {', '.join(x.lower() for x in f['rooms'][:3])}."
    )
(HERE / "references.json").write_text(json.dumps(refs, indent=1, ensure_ascii=False) + "\n")
