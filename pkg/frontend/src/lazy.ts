/**
 * Defers tile image loads until a tile scrolls near the viewport. Images are
 * created with their real URL in data-src; the observer promotes it to src on
 * first approach and then forgets the tile. Where IntersectionObserver does
 * not exist the loader degrades to eager loading.
 */
export class TileLoader {
  private observer: IntersectionObserver | null = null;

  constructor(rootMargin = "200px") {
    if (typeof IntersectionObserver !== "undefined") {
      this.observer = new IntersectionObserver(
        (entries, observer) => {
          for (const entry of entries) {
            if (!entry.isIntersecting) continue;
            promote(entry.target as HTMLImageElement);
            observer.unobserve(entry.target);
          }
        },
        { rootMargin },
      );
    }
  }

  observe(img: HTMLImageElement): void {
    if (this.observer !== null) this.observer.observe(img);
    else promote(img);
  }

  /** Forget every pending tile (call before re-rendering a view). */
  reset(): void {
    this.observer?.disconnect();
  }
}

function promote(img: HTMLImageElement): void {
  const src = img.dataset.src;
  if (src !== undefined) {
    img.src = src;
    delete img.dataset.src;
  }
}
