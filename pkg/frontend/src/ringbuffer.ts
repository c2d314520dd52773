// Fixed-capacity ring buffer; pushing past capacity drops the oldest entry.

export class RingBuffer<T> {
  private items: (T | undefined)[];
  private head = 0;
  private count = 0;
  dropped = 0;

  constructor(readonly capacity: number) {
    if (capacity < 1) throw new Error("capacity must be >= 1");
    this.items = new Array(capacity);
  }

  push(item: T): void {
    const idx = (this.head + this.count) % this.capacity;
    if (this.count === this.capacity) {
      this.head = (this.head + 1) % this.capacity;
      this.dropped++;
      this.items[idx] = item;
    } else {
      this.items[idx] = item;
      this.count++;
    }
  }

  get length(): number {
    return this.count;
  }

  newest(): T | undefined {
    if (this.count === 0) return undefined;
    return this.items[(this.head + this.count - 1) % this.capacity];
  }

  takeNewest(): T | undefined {
    const item = this.newest();
    this.clear();
    return item;
  }

  toArray(): T[] {
    const out: T[] = [];
    for (let i = 0; i < this.count; i++) {
      out.push(this.items[(this.head + i) % this.capacity] as T);
    }
    return out;
  }

  clear(): void {
    this.head = 0;
    this.count = 0;
    this.items.fill(undefined);
  }
}

export interface PlotPoint {
  t: number;
  value: number;
}

// Time-windowed series for the live plots: keeps only the last windowS seconds.
export class PlotSeries {
  private points: PlotPoint[] = [];

  constructor(readonly windowS: number) {}

  push(t: number, value: number): void {
    this.points.push({ t, value });
    const cutoff = t - this.windowS;
    let start = 0;
    while (start < this.points.length && this.points[start].t < cutoff) start++;
    if (start > 0) this.points = this.points.slice(start);
  }

  data(): PlotPoint[] {
    return this.points;
  }

  get length(): number {
    return this.points.length;
  }
}
