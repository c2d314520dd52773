import { describe, expect, it } from "vitest";

import { PlotSeries, RingBuffer } from "../src/ringbuffer.js";

describe("RingBuffer", () => {
  it("keeps at most capacity items, dropping oldest", () => {
    const buffer = new RingBuffer<number>(4);
    for (let i = 0; i < 10; i++) buffer.push(i);
    expect(buffer.length).toBe(4);
    expect(buffer.toArray()).toEqual([6, 7, 8, 9]);
    expect(buffer.dropped).toBe(6);
  });

  it("takeNewest returns the latest and empties the buffer", () => {
    const buffer = new RingBuffer<string>(3);
    buffer.push("a");
    buffer.push("b");
    expect(buffer.takeNewest()).toBe("b");
    expect(buffer.length).toBe(0);
    expect(buffer.takeNewest()).toBeUndefined();
  });

  it("rejects nonsense capacity", () => {
    expect(() => new RingBuffer(0)).toThrow();
  });
});

describe("PlotSeries", () => {
  it("evicts points older than the window", () => {
    const series = new PlotSeries(30);
    for (let t = 0; t <= 100; t += 1) series.push(t, t * 2);
    const data = series.data();
    expect(data[0].t).toBeGreaterThanOrEqual(70);
    expect(data[data.length - 1].t).toBe(100);
  });
});
