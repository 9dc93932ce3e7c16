// Wire-up: one Api, one EventSubscription, one ViewModel, one render loop.

import { Api, EventSubscription, type EventSourceFactory } from './client.js';
import { initialModel, reduce, type Action, type ViewModel } from './state.js';
import { buildLayout, render, renderChart } from './view.js';
import type { ServerState } from './types.js';

export interface ConsoleOptions {
  serverUrl: string;
  root: HTMLElement;
  makeSource?: EventSourceFactory;
  fetchFn?: typeof fetch;
}

export class Console {
  model: ViewModel = initialModel;
  readonly api: Api;
  private readonly sub: EventSubscription;
  private readonly root: HTMLElement;

  constructor(opts: ConsoleOptions) {
    this.root = opts.root;
    this.api = new Api(opts.serverUrl, opts.fetchFn ?? fetch.bind(globalThis));
    const makeSource: EventSourceFactory =
      opts.makeSource ??
      ((url) => new EventSource(url) as unknown as
        ReturnType<EventSourceFactory>);
    this.sub = new EventSubscription(
      `${opts.serverUrl}/events`,
      {
        onOpen: () => {
          this.dispatch({ kind: 'connected' });
          // the stream only carries frames from now on; the snapshot
          // carries everything before
          void this.resync();
        },
        onDown: () => this.dispatch({ kind: 'disconnected' }),
        onFrame: (frame) => {
          this.dispatch({ kind: 'frame', frame });
          if (this.model.needsResync) void this.resync();
          if (frame.type === 'latency') void this.refreshChart();
        },
      },
      makeSource,
    );
    buildLayout(this.root, {
      onStart: () => void this.guard(this.api.control('start')),
      onContinue: () => void this.guard(this.api.control('continue')),
      onReset: () => void this.guard(this.api.control('reset')),
      onSimulate: (label) => void this.guard(this.api.simulateTrial(label)),
    });
    render(this.root, this.model);
  }

  start(): void {
    this.sub.start();
  }

  stop(): void {
    this.sub.close();
  }

  dispatch(action: Action): void {
    this.model = reduce(this.model, action);
    render(this.root, this.model);
  }

  async resync(): Promise<void> {
    try {
      const state: ServerState = await this.api.getState();
      this.dispatch({ kind: 'snapshot', state, seq: this.model.lastSeq });
      await this.refreshChart();
    } catch {
      this.dispatch({ kind: 'disconnected' });
    }
  }

  private async refreshChart(): Promise<void> {
    try {
      renderChart(this.root, await this.api.getSignal());
    } catch {
      // the chart is decorative; never take the console down over it
    }
  }

  private async guard(p: Promise<unknown>): Promise<void> {
    try {
      await p;
    } catch (err) {
      const detail =
        typeof err === 'object' && err !== null && 'detail' in err
          ? String((err as { detail: unknown }).detail)
          : String(err);
      this.model = { ...this.model, notice: detail };
      render(this.root, this.model);
    }
  }
}

export function mount(opts: ConsoleOptions): Console {
  const console_ = new Console(opts);
  console_.start();
  return console_;
}
