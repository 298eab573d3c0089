export {initBackend, tf} from './backend';
export {loadDataset, readHeader, splitIndices, gather, sampleCorrelation} from './dataset';
export type {CsiDataset, DatasetHeader} from './dataset';
export {LogisticPrior, encodeLatent, decodeLatent, TOTAL_FREQ_BITS} from './entropy';
export type {Bitstream, DimTable} from './entropy';
export {CsiAutoencoder, latentDim} from './model';
export type {ModelConfig, ForwardMode} from './model';
export {trainModel} from './train';
export type {TrainOptions, TrainReport} from './train';
export {evaluateModel} from './evaluate';
export type {EvalResult, ConditionStats} from './evaluate';
export {buildProfile, exportProfile} from './profile';
export type {ProfileJson} from './profile';
