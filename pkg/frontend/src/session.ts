/**
 * Selection history for the explorer. Routes are recorded as the user hops
 * between views; stepping back pops the stack so every prior selection is
 * reachable again. Filter tweaks (k, bbox) replace the current entry instead
 * of pushing — panning a map is not a selection.
 */
export class ExplorerSession {
  private stack: string[] = [];
  private current_: string | null = null;

  get current(): string | null {
    return this.current_;
  }

  /** How many back-steps are available. */
  get depth(): number {
    return this.stack.length;
  }

  /** The route a back-step would land on, or null at the bottom. */
  previous(): string | null {
    return this.stack.length > 0 ? this.stack[this.stack.length - 1] : null;
  }

  /** Copy of the stack, oldest first (for tests and debugging). */
  trail(): string[] {
    return this.stack.slice();
  }

  /**
   * Record arrival at `route` and report whether it was a back-step. Arriving
   * at the route on top of the stack counts as stepping back (this is how the
   * browser back button reaches us — by the time the hash change fires, the
   * only evidence is that we returned to the previous selection).
   */
  arrive(route: string): boolean {
    if (route === this.current_) return false;
    if (this.stack.length > 0 && this.stack[this.stack.length - 1] === route) {
      this.stack.pop();
      this.current_ = route;
      return true;
    }
    if (this.current_ !== null) this.stack.push(this.current_);
    this.current_ = route;
    return false;
  }

  /** Swap the current entry without touching the stack (filter changes). */
  replaceCurrent(route: string): void {
    this.current_ = route;
  }
}
