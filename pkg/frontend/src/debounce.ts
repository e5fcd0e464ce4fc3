/** Delay slider-driven requests until the hand settles; newer calls cancel
 * older pending ones (last write wins). */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs = 150,
): ((...args: A) => void) & { cancel(): void; flush(): void } {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let pending: A | null = null;

  const wrapped = ((...args: A) => {
    pending = args;
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      const args2 = pending!;
      pending = null;
      fn(...args2);
    }, delayMs);
  }) as ((...args: A) => void) & { cancel(): void; flush(): void };

  wrapped.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
    pending = null;
  };
  wrapped.flush = () => {
    if (timer === null) return;
    clearTimeout(timer);
    timer = null;
    const args = pending!;
    pending = null;
    fn(...args);
  };
  return wrapped;
}

/** Tags async responses so stale ones can be dropped after a newer request
 * has been issued (in-flight cancellation by versioning). */
export class LatestOnly {
  private version = 0;

  next(): number {
    return ++this.version;
  }

  isCurrent(v: number): boolean {
    return v === this.version;
  }
}
