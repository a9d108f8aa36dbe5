"""Writes spotify_reviews.csv, a small synthetic music-streaming review corpus.

Deterministic: rerunning produces the same file byte for byte.
"""
import csv
import random
from pathlib import Path

OUT = Path(__file__).with_name("spotify_reviews.csv")

THEMES = {
    "playback": (95, [
        "The app lags every time I skip a track.",
        "It keeps making its own order for my queue.",
        "Songs I add to the queue just disappear.",
        "It logs me out for no reason at least once a day.",
        "My liked songs will not play, it just skips to the next one.",
        "My library does not load half the time.",
        "Playback stops randomly in the middle of a song.",
        "The queue resets after every update.",
        "Tracks pause on their own when the screen is off.",
        "It plays a different song than the one I tapped.",
    ]),
    "premium": (70, [
        "Lyrics are locked behind premium now.",
        "Way too many ads for the free version.",
        "I get an ad after every two songs.",
        "Premium keeps going up in price.",
        "Cannot customize playlists without paying for premium.",
        "The ads are louder than the music.",
        "Family plan billing charged me twice.",
        "Unskippable ads are ruining the free tier.",
    ]),
    "shuffle": (65, [
        "Shuffle keeps playing the same songs over and over.",
        "Smart shuffle cannot be turned off.",
        "Shuffle only picks a handful of artists from my playlist.",
        "I turn shuffle off and it turns itself back on.",
        "Shuffle is not random at all.",
        "The smart shuffle button is confusing.",
        "Shuffle plays the same ten songs from a playlist of five hundred.",
    ]),
    "offline": (60, [
        "Offline mode says I am offline even on wifi.",
        "Downloaded songs will not play after a day without internet.",
        "The offline notification shows up when I have signal.",
        "Downloads vanish when I switch to mobile data.",
        "My downloaded playlists need internet to open.",
        "Offline mode is useless on flights.",
        "Buffering never ends in offline mode.",
    ]),
    "podcast": (50, [
        "Podcast audio cuts out on my phone.",
        "Please add transcripts under podcast episodes.",
        "I love listening to podcasts every night.",
        "Podcast episodes restart from the beginning.",
        "Stop recommending podcasts I never asked for.",
        "The podcast player keeps switching episodes.",
    ]),
    "crash": (30, [
        "Randomly crashes and freezes despite the latest version.",
        "Regular crashes on my Pixel when navigating away from the app.",
        "The app is unresponsive with frequent freezes.",
        "Crashes are more frequent after each update.",
        "It freezes on startup and I have to restart my phone.",
        "The app crashes when the screen locks.",
        "Freezes during timeouts and never recovers.",
    ]),
}

PRAISE = [
    "Still the best place to discover new artists.",
    "Great playlists and recommendations.",
    "I love the music library.",
    "Wrapped was amazing this year.",
    "Excellent sound quality.",
]

OPENERS = ["", "", "Honestly, ", "Ugh. ", "Update: ", "Been a user for years. "]


def main():
    rng = random.Random(20231207)
    rows = []
    n = 0
    for theme, (count, pool) in THEMES.items():
        for _ in range(count):
            n += 1
            k = rng.choice([1, 2, 2, 3])
            parts = rng.sample(pool, min(k, len(pool)))
            text = rng.choice(OPENERS) + " ".join(parts)
            if theme == "podcast" and "love" in text:
                rating = rng.choice([4, 5])
            else:
                rating = rng.choice([1, 1, 2, 2, 3])
            if rng.random() < 0.15:
                text += " " + rng.choice(PRAISE)
                rating = min(5, rating + 1)
            rows.append((f"sp-{n:04d}", text, rating, theme))
    for i in range(25):
        n += 1
        parts = rng.sample(PRAISE, 2)
        rating = 1 if i % 8 == 0 else rng.choice([4, 5, 5])
        rows.append((f"sp-{n:04d}", " ".join(parts), rating, "praise"))
    rows.append((f"sp-{n + 1:04d}", "La aplicación se cierra sola todo el tiempo y no puedo escuchar nada.", 1, "other"))
    rows.append((f"sp-{n + 2:04d}", rows[0][1], rows[0][2], "duplicate"))
    rng.shuffle(rows)
    with OUT.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["review_id", "text", "rating", "app_id", "timestamp"])
        for i, (rid, text, rating, _) in enumerate(rows):
            day = 1 + i % 28
            w.writerow([rid, text, rating, "com.spotify.music", f"2024-03-{day:02d}T12:00:00Z"])


if __name__ == "__main__":
    main()
